"""Print exact resonances per band for the default automorphism and D = 1..4."""
import math

from nilflow_lab.heis import stable_generator
from nilflow_lab.spectral import resonances_exact


def main():
    A = stable_generator(2, 1, 3, 2)
    print(f"lam = {A.lam:.12f}")
    for D in range(1, 5):
        rs = resonances_exact(A, D, 1, kmax=2)
        for k in range(3):
            phases = sorted(math.atan2(z.imag, z.real) / math.pi for z in rs.values(k))
            print(f"D={D} k={k} |z|={abs(rs.values(k)[0]):.7f} phases/pi={[round(p, 4) for p in phases]}")


if __name__ == "__main__":
    main()
