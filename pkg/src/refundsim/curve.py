"""Short-Weierstrass group arithmetic with injectable curve parameters.

Points are affine ``(x, y)`` tuples and ``None`` is the identity element.
The hot paths (scalar multiplication) run in Jacobian coordinates, and each
``CurveGroup`` carries a fixed-base window table for its generator so that
``g_mul`` is several times faster than a generic multiplication.

The protocol always runs on :data:`SECP256K1`; tests additionally exercise a
tiny brute-forceable group to cross-check the arithmetic exhaustively.
"""

from __future__ import annotations

from typing import Optional, Tuple

Point = Optional[Tuple[int, int]]

_JINF = (0, 1, 0)


class CurveGroup:
    """y^2 = x^3 + a*x + b over GF(p) with generator of prime order n."""

    def __init__(self, name: str, p: int, a: int, b: int, n: int, gx: int, gy: int):
        if p % 4 != 3:
            raise ValueError("square roots require p % 4 == 3")
        self.name = name
        self.p = p
        self.a = a % p
        self.b = b % p
        self.n = n
        self.g: Point = (gx, gy)
        self.coord_bytes = (p.bit_length() + 7) // 8
        self.scalar_bytes = (n.bit_length() + 7) // 8
        self._window = 4
        self._comb = self._build_comb()

    def __repr__(self) -> str:
        return f"CurveGroup({self.name})"

    # -- Jacobian internals --------------------------------------------------

    def _jdouble(self, pt):
        x1, y1, z1 = pt
        p = self.p
        if z1 == 0 or y1 == 0:
            return _JINF
        y1_2 = y1 * y1 % p
        y1_4 = y1_2 * y1_2 % p
        s = 4 * x1 * y1_2 % p
        m = 3 * x1 * x1
        if self.a:
            m += self.a * pow(z1, 4, p)
        m %= p
        x3 = (m * m - 2 * s) % p
        y3 = (m * (s - x3) - 8 * y1_4) % p
        z3 = 2 * y1 * z1 % p
        return (x3, y3, z3)

    def _jadd(self, p1, p2):
        x1, y1, z1 = p1
        x2, y2, z2 = p2
        p = self.p
        if z1 == 0:
            return p2
        if z2 == 0:
            return p1
        z1_2 = z1 * z1 % p
        z2_2 = z2 * z2 % p
        u1 = x1 * z2_2 % p
        u2 = x2 * z1_2 % p
        s1 = y1 * z2_2 * z2 % p
        s2 = y2 * z1_2 * z1 % p
        if u1 == u2:
            if s1 != s2:
                return _JINF
            return self._jdouble(p1)
        h = (u2 - u1) % p
        r = (s2 - s1) % p
        h2 = h * h % p
        h3 = h2 * h % p
        u1h2 = u1 * h2 % p
        x3 = (r * r - h3 - 2 * u1h2) % p
        y3 = (r * (u1h2 - x3) - s1 * h3) % p
        z3 = h * z1 * z2 % p
        return (x3, y3, z3)

    def _to_jacobian(self, pt: Point):
        if pt is None:
            return _JINF
        return (pt[0], pt[1], 1)

    def _to_affine(self, pt) -> Point:
        x, y, z = pt
        if z == 0:
            return None
        p = self.p
        zinv = pow(z, -1, p)
        zinv2 = zinv * zinv % p
        return (x * zinv2 % p, y * zinv2 * zinv % p)

    def _build_comb(self):
        # table[i][w-1] = (w << (window*i)) * G for each window position
        bits = self.n.bit_length()
        w = self._window
        windows = (bits + w - 1) // w
        table = []
        base = self._to_jacobian(self.g)
        for _ in range(windows):
            row = []
            acc = _JINF
            for _ in range((1 << w) - 1):
                acc = self._jadd(acc, base)
                row.append(acc)
            table.append(row)
            for _ in range(w):
                base = self._jdouble(base)
        return table

    # -- public API ----------------------------------------------------------

    def add(self, p1: Point, p2: Point) -> Point:
        return self._to_affine(self._jadd(self._to_jacobian(p1), self._to_jacobian(p2)))

    def negate(self, pt: Point) -> Point:
        if pt is None:
            return None
        return (pt[0], (self.p - pt[1]) % self.p)

    def mul(self, k: int, pt: Point) -> Point:
        """Generic scalar multiplication (left-to-right, Jacobian)."""
        k %= self.n
        if k == 0 or pt is None:
            return None
        acc = _JINF
        base = self._to_jacobian(pt)
        for i in range(k.bit_length() - 1, -1, -1):
            acc = self._jdouble(acc)
            if (k >> i) & 1:
                acc = self._jadd(acc, base)
        return self._to_affine(acc)

    def g_mul(self, k: int) -> Point:
        """Fixed-base multiplication of the generator via the comb table."""
        k %= self.n
        if k == 0:
            return None
        acc = _JINF
        w = self._window
        mask = (1 << w) - 1
        i = 0
        while k:
            digit = k & mask
            if digit:
                acc = self._jadd(acc, self._comb[i][digit - 1])
            k >>= w
            i += 1
        return self._to_affine(acc)

    def on_curve(self, pt: Point) -> bool:
        if pt is None:
            return True
        x, y = pt
        return (y * y - (x * x * x + self.a * x + self.b)) % self.p == 0

    def lift_x(self, x: int, parity: int) -> Point:
        """Recover the point with the given x and y-parity, or None."""
        p = self.p
        rhs = (x * x * x + self.a * x + self.b) % p
        y = pow(rhs, (p + 1) // 4, p)
        if y * y % p != rhs:
            return None
        if y & 1 != parity & 1:
            y = p - y
        return (x, y)

    def encode_point(self, pt: Point) -> bytes:
        """Compressed encoding: 0x02/0x03 parity byte plus big-endian x."""
        if pt is None:
            raise ValueError("cannot encode the identity point")
        prefix = b"\x02" if pt[1] % 2 == 0 else b"\x03"
        return prefix + pt[0].to_bytes(self.coord_bytes, "big")

    def decode_point(self, data: bytes) -> Point:
        if len(data) != 1 + self.coord_bytes or data[0] not in (2, 3):
            raise ValueError("malformed compressed point")
        x = int.from_bytes(data[1:], "big")
        pt = self.lift_x(x, data[0] & 1)
        if pt is None:
            raise ValueError("x is not on the curve")
        return pt

    def encode_scalar(self, k: int) -> bytes:
        return (k % self.n).to_bytes(self.scalar_bytes, "big")


SECP256K1 = CurveGroup(
    name="secp256k1",
    p=2**256 - 2**32 - 977,
    a=0,
    b=7,
    n=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
    gx=0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    gy=0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
)
