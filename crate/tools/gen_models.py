#!/usr/bin/env python3
"""Generate the bundled mechanism model files.

Initial positions close each kinematic loop exactly and initial velocities
are obtained by differentiating the loop-closure parametrization, so the
shipped states satisfy the position- and velocity-level constraint
equations to floating-point accuracy.
"""
import json
import os
from mpmath import mp, mpf, cos, sin, sqrt, pi, matrix, norm

mp.dps = 40

OUT = os.path.join(os.path.dirname(__file__), "..", "models")


def f64(x):
    return float(mpf(x))


def vec(v):
    return [f64(v[0]), f64(v[1]), f64(v[2])]


def mat_rows(cols):
    """Row-major 9-list from three column vectors."""
    c0, c1, c2 = cols
    return [f64(c0[0]), f64(c1[0]), f64(c2[0]),
            f64(c0[1]), f64(c1[1]), f64(c2[1]),
            f64(c0[2]), f64(c1[2]), f64(c2[2])]


def cross(a, b):
    return matrix([a[1] * b[2] - a[2] * b[1],
                   a[2] * b[0] - a[0] * b[2],
                   a[0] * b[1] - a[1] * b[0]])


def unskew_body(cols, dcols):
    """Body angular velocity from frame columns and their time derivatives.

    omega_tilde = A^T Adot; columns of A are the body axes in globals.
    """
    A = matrix(3, 3)
    Ad = matrix(3, 3)
    for k in range(3):
        for r in range(3):
            A[r, k] = cols[k][r]
            Ad[r, k] = dcols[k][r]
    W = A.T * Ad
    return matrix([W[2, 1], W[0, 2], W[1, 0]])


def body(bid, mass, inertia, r, cols, rdot, om):
    return {
        "id": bid,
        "mass": f64(mass),
        "inertia": [f64(inertia[0]), f64(inertia[1]), f64(inertia[2])],
        "r0": vec(r),
        "A0": mat_rows(cols),
        "rdot0": vec(rdot),
        "omega_bar0": vec(om),
    }


def write(name, model):
    path = os.path.join(OUT, name)
    with open(path, "w") as fh:
        json.dump(model, fh, indent=2)
        fh.write("\n")
    print("wrote", path)


GRAV = [0.0, 0.0, -9.81]

# ---------------------------------------------------------------- pendulum
# Slender rod, length 4, hinged at the origin, axis = global x.
# Local x runs along the rod, local z is the hinge axis.
# Driven angle between local y and global -z: pi/2 + pi/4*cos(2 t).
phi0 = pi / 4
c, s = cos(phi0), sin(phi0)
cols = (matrix([0, c, s]), matrix([0, -s, c]), matrix([1, 0, 0]))
pend_body = body(1, 78, (mpf("0.0325"), 104, 104),
                 matrix([0, 2 * c, 2 * s]), cols, matrix([0, 0, 0]), matrix([0, 0, 0]))
pendulum = {
    "name": "single_pendulum",
    "gravity": GRAV,
    "bodies": [pend_body],
    "constraints": [
        {"kind": "RJ", "i": 1, "j": 0,
         "sP_i": [-2.0, 0.0, 0.0], "sQ_j": [0.0, 0.0, 0.0],
         "a_i": [1.0, 0.0, 0.0], "b_i": [0.0, 1.0, 0.0], "c_j": [1.0, 0.0, 0.0]},
        {"kind": "DP1", "i": 1, "j": 0,
         "a_i": [0.0, 1.0, 0.0], "a_j": [0.0, 0.0, -1.0],
         "driver": {"kind": "cosine_angle", "c0": f64(pi / 2), "c1": f64(pi / 4),
                    "omega": 2.0, "phi0": 0.0}},
    ],
}
write("single_pendulum.json", pendulum)

# ---------------------------------------------------------- double pendulum
# Rod 1 along +y from the origin, rod 2 hanging along -z from rod 1's tip.
cols1 = (matrix([0, 1, 0]), matrix([0, 0, 1]), matrix([1, 0, 0]))
cols2 = (matrix([0, 0, -1]), matrix([0, 1, 0]), matrix([1, 0, 0]))
double_pendulum = {
    "name": "double_pendulum",
    "gravity": GRAV,
    "bodies": [
        body(1, 78, (mpf("0.0325"), 104, 104), matrix([0, 2, 0]), cols1,
             matrix([0, 0, 0]), matrix([0, 0, 0])),
        body(2, 39, (mpf("0.01625"), mpf("13.01"), mpf("13.01")), matrix([0, 4, -1]),
             cols2, matrix([0, 0, 0]), matrix([0, 0, 0])),
    ],
    "constraints": [
        {"kind": "RJ", "i": 1, "j": 0,
         "sP_i": [-2.0, 0.0, 0.0], "sQ_j": [0.0, 0.0, 0.0],
         "a_i": [1.0, 0.0, 0.0], "b_i": [0.0, 1.0, 0.0], "c_j": [1.0, 0.0, 0.0]},
        {"kind": "RJ", "i": 2, "j": 1,
         "sP_i": [-1.0, 0.0, 0.0], "sQ_j": [2.0, 0.0, 0.0],
         "a_i": [1.0, 0.0, 0.0], "b_i": [0.0, 1.0, 0.0], "c_j": [0.0, 0.0, 1.0]},
    ],
}
write("double_pendulum.json", double_pendulum)

# -------------------------------------------------------------- slider crank
# Crank spins about the global z axis (the crank's own -x axis) at 2*pi rad/s;
# connecting rod couples the crank tip to a slider translating along global x.
ph = mpf("0.1")          # initial crank angle
phd = 2 * pi             # crank rate
a_cr = mpf("0.4")        # crank length
L = mpf(1)               # rod length


def crank_cols(q):
    return (matrix([0, 0, -1]),
            matrix([cos(q), sin(q), 0]),
            matrix([sin(q), -cos(q), 0]))


def crank_dcols(q, qd):
    return (matrix([0, 0, 0]),
            matrix([-sin(q) * qd, cos(q) * qd, 0]),
            matrix([cos(q) * qd, sin(q) * qd, 0]))


def tip(q):
    return matrix([a_cr * cos(q), a_cr * sin(q), 0])


def slider_x(q):
    return a_cr * cos(q) + sqrt(L ** 2 - a_cr ** 2 * sin(q) ** 2)


def d_slider_x(q, qd):
    return (-a_cr * sin(q) - (a_cr ** 2 * sin(q) * cos(q)) / sqrt(L ** 2 - a_cr ** 2 * sin(q) ** 2)) * qd


def rod_u(q):
    T = tip(q)
    return matrix([slider_x(q) - T[0], -T[1], 0]) / L


def rod_cols(q):
    u = rod_u(q)
    return (u, matrix([0, 0, 1]), matrix([u[1], -u[0], 0]))


eps_q = mpf(10) ** -20


def num_dcols(colfun, q, qd):
    cp = colfun(q + eps_q)
    cm = colfun(q - eps_q)
    return tuple((cp[k] - cm[k]) / (2 * eps_q) * qd for k in range(3))


T0 = tip(ph)
xs0 = slider_x(ph)
rod_r0 = (T0 + matrix([xs0, 0, 0])) / 2
rod_rd0 = (matrix([-a_cr * sin(ph), a_cr * cos(ph), 0]) * phd + matrix([d_slider_x(ph, phd), 0, 0])) / 2
rod_om = unskew_body(rod_cols(ph), num_dcols(rod_cols, ph, phd))

crank_r0 = tip(ph) / 2
crank_rd0 = matrix([-sin(ph), cos(ph), 0]) * (a_cr / 2 * phd)
crank_om = unskew_body(crank_cols(ph), crank_dcols(ph, phd))

slider_crank = {
    "name": "slider_crank",
    "gravity": GRAV,
    "bodies": [
        body(1, 2, (mpf("2") / 75, mpf("0.004"), mpf("2") / 75), crank_r0,
             crank_cols(ph), crank_rd0, crank_om),
        body(2, 1, (mpf("0.002"), mpf(1) / 12, mpf(1) / 12), rod_r0,
             rod_cols(ph), rod_rd0, rod_om),
        # slider frame tipped 90 deg about x so its ZXZ angles sit away from
        # the theta = 0 singularity (local y -> global z, local z -> global -y)
        body(3, mpf("0.5"), (mpf("0.005"), mpf("0.005"), mpf("0.005")),
             matrix([xs0, 0, 0]), (matrix([1, 0, 0]), matrix([0, 0, 1]), matrix([0, -1, 0])),
             matrix([d_slider_x(ph, phd), 0, 0]), matrix([0, 0, 0])),
    ],
    "constraints": [
        {"kind": "RJ", "i": 1, "j": 0,
         "sP_i": [0.0, -0.2, 0.0], "sQ_j": [0.0, 0.0, 0.0],
         "a_i": [0.0, 1.0, 0.0], "b_i": [0.0, 0.0, 1.0], "c_j": [0.0, 0.0, 1.0]},
        {"kind": "DP1", "i": 1, "j": 0,
         "a_i": [0.0, 1.0, 0.0], "a_j": [1.0, 0.0, 0.0],
         "driver": {"kind": "cosine", "c0": 0.0, "c1": 1.0,
                    "omega": f64(2 * pi), "phi0": 0.1}},
        {"kind": "SJ", "i": 1, "j": 2,
         "sP_i": [0.0, 0.2, 0.0], "sQ_j": [-0.5, 0.0, 0.0]},
        {"kind": "DP1", "i": 2, "j": 3,
         "a_i": [0.0, 0.0, 1.0], "a_j": [0.0, 1.0, 0.0]},
        {"kind": "DP2", "i": 2, "j": 3,
         "a_i": [0.0, 1.0, 0.0], "sP_i": [0.5, 0.0, 0.0], "sQ_j": [0.0, 0.0, 0.0]},
        {"kind": "DP2", "i": 2, "j": 3,
         "a_i": [0.0, 0.0, 1.0], "sP_i": [0.5, 0.0, 0.0], "sQ_j": [0.0, 0.0, 0.0]},
        {"kind": "D", "i": 2, "j": 3,
         "sP_i": [-0.5, 0.0, 0.0], "sQ_j": [0.0, 0.0, 0.0],
         "driver": {"kind": "constant", "c": 1.0}},
        {"kind": "TJ", "i": 3, "j": 0,
         "sP_i": [0.0, 0.0, 0.0], "sQ_j": [0.0, 0.0, 0.0],
         "a_i": [0.0, 0.0, -1.0], "b_i": [0.0, 1.0, 0.0],
         "c_j": [1.0, 0.0, 0.0], "spin_j": [0.0, 0.0, 1.0]},
    ],
}
write("slider_crank.json", slider_crank)

# ---------------------------------------------------------------- four link
# Crank-rocker in the x = 0 plane; all revolute axes along global x.
# Rotor (length 1) at the origin turns at pi rad/s; coupler (length 5)
# links it to a follower (length 4) pivoted at (0, 4, 0).
ph = mpf("0.1")
phd = pi
O2 = matrix([0, 4, 0])


def rotor_dir(q):
    return matrix([0, -sin(q), cos(q)])


def fol_dir(b):
    return matrix([0, -sin(b), cos(b)])


def closure(b, q):
    T2 = O2 + 4 * fol_dir(b)
    d = T2 - rotor_dir(q)
    return d[0] ** 2 + d[1] ** 2 + d[2] ** 2 - 25


def solve_beta(q):
    # Newton from the nearby exact solution beta(0.1) ~ 0
    b = mpf(0)
    for _ in range(80):
        f = closure(b, q)
        df = (closure(b + eps_q, q) - closure(b - eps_q, q)) / (2 * eps_q)
        b -= f / df
    return b


beta = solve_beta(ph)
dbeta = -((closure(beta, ph + eps_q) - closure(beta, ph - eps_q)) / (2 * eps_q)) / \
        ((closure(beta + eps_q, ph) - closure(beta - eps_q, ph)) / (2 * eps_q)) * phd

T1 = rotor_dir(ph)
T2 = O2 + 4 * fol_dir(beta)
u_c = (T2 - T1) / 5


def frame(xdir):
    return (xdir, cross(matrix([1, 0, 0]), xdir), matrix([1, 0, 0]))


def coupler_cols(q):
    b = solve_beta(q)
    t2 = O2 + 4 * fol_dir(b)
    return frame((t2 - rotor_dir(q)) / 5)


v_T1 = matrix([0, -cos(ph), -sin(ph)]) * phd
v_T2 = 4 * dbeta * matrix([0, -cos(beta), -sin(beta)])

rotor_cols = frame(rotor_dir(ph))
rotor_om = unskew_body(rotor_cols, num_dcols(lambda q: frame(rotor_dir(q)), ph, phd))
fol_cols = frame(fol_dir(beta))
fol_om = unskew_body(fol_cols, num_dcols(lambda b: frame(fol_dir(b)), beta, dbeta))
coup_om = unskew_body(frame(u_c), num_dcols(coupler_cols, ph, phd))
coup_rd = (v_T1 + v_T2) / 2

four_link = {
    "name": "four_link",
    "gravity": GRAV,
    "bodies": [
        body(1, 2, (mpf("0.004"), mpf(1) / 6, mpf(1) / 6), rotor_dir(ph) / 2,
             rotor_cols, v_T1 / 2, rotor_om),
        body(2, 10, (mpf("0.02"), mpf(125) / 6, mpf(125) / 6), (T1 + T2) / 2,
             frame(u_c), coup_rd, coup_om),
        body(3, 8, (mpf("0.016"), mpf(32) / 3, mpf(32) / 3), O2 + 2 * fol_dir(beta),
             fol_cols, v_T2 / 2, fol_om),
    ],
    "constraints": [
        {"kind": "RJ", "i": 1, "j": 0,
         "sP_i": [-0.5, 0.0, 0.0], "sQ_j": [0.0, 0.0, 0.0],
         "a_i": [1.0, 0.0, 0.0], "b_i": [0.0, 1.0, 0.0], "c_j": [1.0, 0.0, 0.0]},
        {"kind": "DP1", "i": 1, "j": 0,
         "a_i": [1.0, 0.0, 0.0], "a_j": [0.0, 1.0, 0.0],
         "driver": {"kind": "cosine", "c0": 0.0, "c1": 1.0,
                    "omega": f64(pi), "phi0": f64(mpf("0.1") + pi / 2)}},
        {"kind": "SJ", "i": 1, "j": 2,
         "sP_i": [0.5, 0.0, 0.0], "sQ_j": [-2.5, 0.0, 0.0]},
        {"kind": "UJ", "i": 2, "j": 3,
         "sP_i": [2.5, 0.0, 0.0], "sQ_j": [2.0, 0.0, 0.0],
         "a_i": [0.0, 1.0, 0.0], "a_j": [0.0, 0.0, 1.0]},
        {"kind": "RJ", "i": 3, "j": 0,
         "sP_i": [-2.0, 0.0, 0.0], "sQ_j": [0.0, 4.0, 0.0],
         "a_i": [1.0, 0.0, 0.0], "b_i": [0.0, 1.0, 0.0], "c_j": [1.0, 0.0, 0.0]},
    ],
}
write("four_link.json", four_link)
