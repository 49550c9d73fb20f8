"""Reed-Solomon codec over GF(2^8).

Systematic rs(n, k) with n <= 255, primitive polynomial 0x11D, generator
element 2, and generator-polynomial roots starting at alpha^0, so codewords
interoperate with the common table-driven implementations. Decoding runs
syndromes -> Berlekamp-Massey -> Chien search -> Forney and reports how many
symbols it repaired; anything past the design capacity floor((n - k) / 2)
surfaces as ``uncorrectable`` whenever the algebra exposes it (a bounded-
distance decoder cannot flag the rare beyond-capacity word that lands inside
another codeword's radius).
"""

from __future__ import annotations

from dataclasses import dataclass

_PRIM_POLY = 0x11D
_GF_EXP = [0] * 512
_GF_LOG = [0] * 256


def _init_tables():
    x = 1
    for i in range(255):
        _GF_EXP[i] = x
        _GF_LOG[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _PRIM_POLY
    for i in range(255, 512):
        _GF_EXP[i] = _GF_EXP[i - 255]


_init_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return _GF_EXP[_GF_LOG[a] + _GF_LOG[b]]


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(256)")
    if a == 0:
        return 0
    return _GF_EXP[(_GF_LOG[a] - _GF_LOG[b]) % 255]


def gf_pow(a: int, n: int) -> int:
    if a == 0:
        return 0
    return _GF_EXP[(_GF_LOG[a] * n) % 255]


def _poly_mul(p, q):
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a == 0:
            continue
        for j, b in enumerate(q):
            out[i + j] ^= gf_mul(a, b)
    return out


def _poly_add(p, q):
    # Coefficients are highest-degree first, so align at the tail.
    out = [0] * max(len(p), len(q))
    out[len(out) - len(p) :] = p
    for i, c in enumerate(q):
        out[i + len(out) - len(q)] ^= c
    return out


def _poly_eval(p, x):
    # Horner, p given highest degree first.
    y = p[0]
    for c in p[1:]:
        y = gf_mul(y, x) ^ c
    return y


def _generator_poly(nsym: int):
    g = [1]
    for i in range(nsym):
        g = _poly_mul(g, [1, gf_pow(2, i)])
    return g


@dataclass
class DecodeResult:
    message: bytes
    corrected_symbols: int
    uncorrectable: bool


class ReedSolomon:
    def __init__(self, n: int = 255, k: int = 223):
        if not (0 < k < n <= 255):
            raise ValueError("require 0 < k < n <= 255")
        self.n = n
        self.k = k
        self.nsym = n - k
        self.capacity = self.nsym // 2
        self._gen = _generator_poly(self.nsym)

    def encode(self, message: bytes) -> bytes:
        """Systematic codeword: message followed by nsym parity bytes."""
        if len(message) != self.k:
            raise ValueError(f"message must be exactly {self.k} bytes")
        rem = [0] * self.nsym
        for byte in message:
            coef = byte ^ rem[0]
            rem = rem[1:] + [0]
            if coef != 0:
                log_c = _GF_LOG[coef]
                for j in range(1, len(self._gen)):
                    if self._gen[j]:
                        rem[j - 1] ^= _GF_EXP[log_c + _GF_LOG[self._gen[j]]]
        return bytes(message) + bytes(rem)

    def _syndromes(self, codeword):
        return [_poly_eval(codeword, gf_pow(2, i)) for i in range(self.nsym)]

    def _berlekamp_massey(self, synd):
        err_loc = [1]
        old_loc = [1]
        for i in range(self.nsym):
            delta = synd[i]
            for j in range(1, len(err_loc)):
                delta ^= gf_mul(err_loc[-(j + 1)], synd[i - j])
            old_loc.append(0)
            if delta != 0:
                if len(old_loc) > len(err_loc):
                    new_loc = [gf_mul(c, delta) for c in old_loc]
                    old_loc = [gf_div(c, delta) for c in err_loc]
                    err_loc = new_loc
                err_loc = _poly_add(err_loc, [gf_mul(c, delta) for c in old_loc])
        while len(err_loc) > 1 and err_loc[0] == 0:
            err_loc = err_loc[1:]
        return err_loc

    def decode(self, codeword: bytes) -> DecodeResult:
        """Correct up to ``capacity`` symbol errors in place.

        Returns the k message bytes, the number of symbols repaired, and an
        uncorrectable flag. On failure the unrepaired message part is
        returned as a best effort.
        """
        if len(codeword) != self.n:
            raise ValueError(f"codeword must be exactly {self.n} bytes")
        cw = list(codeword)
        synd = self._syndromes(cw)
        if max(synd) == 0:
            return DecodeResult(bytes(cw[: self.k]), 0, False)

        err_loc = self._berlekamp_massey(synd)
        n_errors = len(err_loc) - 1
        if n_errors > self.capacity:
            return DecodeResult(bytes(cw[: self.k]), 0, True)

        # Chien search over the codeword positions.
        positions = []
        for pos in range(self.n):
            if _poly_eval(err_loc, gf_pow(2, 255 - (self.n - 1 - pos))) == 0:
                positions.append(pos)
        if len(positions) != n_errors:
            return DecodeResult(bytes(cw[: self.k]), 0, True)

        # Forney: error magnitudes from the evaluator polynomial.
        synd_poly = list(reversed(synd))
        omega = _poly_mul(synd_poly, err_loc)
        omega = omega[len(omega) - self.nsym :]
        # Formal derivative over GF(2): keep odd-degree terms, shift down.
        deriv = [c if (len(err_loc) - 1 - i) % 2 == 1 else 0 for i, c in enumerate(err_loc)]
        deriv = deriv[:-1] or [0]

        corrected = 0
        for pos in positions:
            x = gf_pow(2, self.n - 1 - pos)
            x_inv = gf_div(1, x)
            num = _poly_eval(omega, x_inv)
            den = _poly_eval(deriv, x_inv)
            if den == 0:
                return DecodeResult(bytes(cw[: self.k]), 0, True)
            magnitude = gf_mul(num, gf_div(1, den))
            magnitude = gf_mul(magnitude, x)  # fcr = 0 adjustment
            if magnitude != 0:
                cw[pos] ^= magnitude
                corrected += 1

        if max(self._syndromes(cw)) != 0:
            return DecodeResult(bytes(codeword[: self.k]), 0, True)
        return DecodeResult(bytes(cw[: self.k]), corrected, False)
