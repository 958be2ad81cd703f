"""The two verification backbones: brute-force DFT and finite differences.

The fast transform is checked bin-for-bin against a direct evaluation of
the DFT definition; every learnable block's analytic gradient is checked
against central differences.  These are the same oracles the test suite
runs; this script shows them standalone.

Run:  python demos/03_oracles.py
"""

import numpy as np

from adair import spectral
from adair.gradcheck import gradcheck_suite
from adair.tensor import Tensor

# --- transform vs. the definition -------------------------------------------
rng = np.random.default_rng(0)
print("fft2 against the brute-force definitional DFT:")
for n in (4, 8, 16, 12):  # 12 exercises the mixed-radix fallback
    x = rng.normal(size=(n, n))
    spec = spectral.fft2(Tensor(x.reshape(1, 1, n, n)))
    fast = spec.re.data[0, 0] + 1j * spec.im.data[0, 0]
    err = np.abs(fast - spectral.dft2_oracle(x)).max()
    print(f"  {n:>2}x{n:<2}  max abs err {err:.2e}")

x = rng.normal(size=(16, 16))
f = spectral.dft2_oracle(x)
parseval = abs((x ** 2).sum() - (np.abs(f) ** 2).sum() / x.size) / (x ** 2).sum()
print(f"Parseval identity relative error: {parseval:.2e}")

# --- gradients vs. central differences --------------------------------------
print("\nfinite-difference suite over every learnable block:")
for name, err, tol in gradcheck_suite(seed=0):
    status = "ok" if err < tol else "FAIL"
    print(f"  {name:<26} max rel err {err:.2e}  (tol {tol:.0e})  {status}")
