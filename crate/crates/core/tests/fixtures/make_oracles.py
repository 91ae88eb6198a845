"""Reference values computed with numpy, independent of the Rust code.

Run from this directory: python3 make_oracles.py > oracles.toml
"""
import numpy as np

C = 299792458.0
rng = np.random.default_rng(20240611)


def arr(name, x):
    x = np.asarray(x, dtype=float).ravel()
    print(f"{name} = [" + ", ".join(repr(float(v)) for v in x) + "]")


def carr(name, z):
    z = np.asarray(z, dtype=complex).ravel()
    arr(name + "_re", z.real)
    arr(name + "_im", z.imag)


def steering(n, fc, theta, r):
    lam = C / fc
    d = lam / 2
    delta = (2 * np.arange(1, n + 1) - n - 1) / 2
    dist = np.sqrt(r**2 + (delta * d) ** 2 - 2 * r * delta * d * theta)
    return np.exp(-1j * 2 * np.pi / lam * (dist - r)) / np.sqrt(n)


for k, (theta, r) in enumerate([(0.3, 5.0), (-0.7, 40.0), (0.0, 87.5)]):
    print(f"[[steering]]\nn = 16\nfc = 100e9\ntheta = {theta}\nr = {r}")
    carr("b", steering(16, 100e9, theta, r))
    lam = C / 100e9
    g = np.sqrt(16) * lam / (4 * np.pi * r) * np.exp(-1j * 2 * np.pi * r / lam)
    arr("gamma", [g.real, g.imag])
    print()

for k in range(3):
    n, m = 8, 6
    h = rng.normal(size=n) + 1j * rng.normal(size=n)
    z = rng.normal(size=n) + 1j * rng.normal(size=n)
    y = rng.normal(size=m) + 1j * rng.normal(size=m)
    a = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(m, n))) / np.sqrt(n)
    u = rng.uniform(size=n)
    mu, beta = [(0.1, 10.0), (0.7, 0.0), (2.0, 3.0)][k]
    w = np.sqrt(1 + beta * (1 - u))
    f = 0.5 * np.sum(np.abs(y - a @ h) ** 2) + 0.5 * mu * np.sum(np.abs(w * (h - z)) ** 2)
    grad = a.conj().T @ (a @ h - y) + mu * w**2 * (h - z)
    print(f"[[objective]]\nmu = {mu}\nbeta = {beta}")
    carr("h", h)
    carr("z", z)
    carr("y", y)
    carr("a", a)
    arr("u", u)
    arr("f", [f])
    carr("grad", grad)
    print()

for e in [[0.0, 0.0, 0.0], [1.0, 0.0, 1.0, 1.0], [0.3, 0.9, 0.05, 0.5, 1.0]]:
    n = len(e) + 1
    g = np.zeros((n, n))
    g[0, 1:] = e
    g[1:, 0] = e
    a = g + np.eye(n)
    d = a.sum(axis=1)
    gbar = a / np.sqrt(np.outer(d, d))
    print("[[adjacency]]")
    arr("edges", e)
    arr("gbar", gbar)
    arr("radius", [np.max(np.abs(np.linalg.eigvalsh(gbar)))])
    print()

for snr in [0.0, 10.0, 23.5]:
    n, m = 8, 12
    h = rng.normal(size=n) + 1j * rng.normal(size=n)
    a = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(m, n))) / np.sqrt(n)
    s2 = np.sum(np.abs(a @ h) ** 2) / m / 10 ** (snr / 10)
    print(f"[[sigma2]]\nsnr_db = {snr}")
    carr("h", h)
    carr("a", a)
    arr("sigma2", [s2])
    print()

for rho, vals in [(0.5, [4.0, 1.0, 3.0, 2.0]), (0.3, list(rng.normal(size=10))), (0.25, list(rng.normal(size=7)))]:
    v = np.sort(np.abs(vals))
    pos = rho * len(v)
    k = int(np.floor(pos))
    q = v[0] if k == 0 else (0.5 * (v[k - 1] + v[k]) if pos == k else v[k])
    print(f"[[quantile]]\nrho = {rho}")
    arr("values", np.abs(vals))
    arr("q", [q])
    print()
