"""Run the structural verification checks and print their reports.

Exercises the checks that guard the construction on a small cubic mesh and
on a single distorted pyramid: exactness of the operator sequence, the
interpolation/operator commuting property, polynomial consistency of the
potential reconstructions, and the trace compatibility and component
recovery identities of the basis machinery.

Run with:  python demos/verification_walkthrough.py
"""

import json

import numpy as np

import polyddr


def pyramid_mesh():
    vertices = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.1, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 0.9, 0.0],
            [0.45, 0.55, 1.2],
        ]
    )
    faces = [[0, 3, 2, 1], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    cells = [[0, 1, 2, 3, 4]]
    return polyddr.Mesh(vertices, faces, cells)


def main():
    mesh = polyddr.generate_cubic_mesh(2)
    k = 0

    reports = [
        polyddr.check_complex(mesh, k),
        polyddr.check_commutation(mesh, k),
        polyddr.check_polynomial_consistency(mesh, k),
    ]

    pyramid = pyramid_mesh()
    reports.append(polyddr.check_traces(pyramid, max_degree=3))
    reports.append(polyddr.check_recovery(pyramid, max_degree=3))

    all_passed = True
    for report in reports:
        all_passed &= report.passed
        for line in report.lines():
            print(line)
        print()

    # Reports serialize to JSON for archiving alongside run artifacts.
    blob = json.loads(reports[0].to_json())
    print("first report as JSON keys:", sorted(blob))
    print("all checks passed" if all_passed else "SOME CHECKS FAILED")


if __name__ == "__main__":
    main()
