"""Rate-1/n recursive convolutional codes, windowed Viterbi and an ML oracle.

Register algebra (taps are most-significant bit first, ``taps[i]`` multiplies
the register bit ``a[t-i]``)::

    a[t]      = u[t] xor sum_{i>=1} fb[i] * a[t-i]
    out_j[t]  = sum_{i>=0} g_j[i] * a[t-i]

A feedback vector ``[1, 0, ..., 0]`` gives a feed-forward code.  The trellis
state packs ``(a[t-1], ..., a[t-m])`` with ``a[t-1]`` as the most significant
bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .channels import ChannelSpec, channel_loglik
from .errors import ConfigurationError, InputError, UsageError

# (n, m) -> (generators, feedback), octal digits as in the published RSC table
GENERATOR_TABLE: dict[tuple[int, int], tuple[tuple[str, ...], str]] = {
    (2, 1): (("2", "3"), "3"),
    (2, 2): (("5", "7"), "7"),
    (2, 3): (("15", "17"), "17"),
    (2, 4): (("23", "35"), "37"),
    (2, 5): (("53", "75"), "75"),
    (2, 6): (("133", "171"), "163"),
    (2, 7): (("247", "371"), "357"),
    (3, 1): (("1", "3", "3"), "3"),
    (3, 2): (("5", "7", "7"), "7"),
    (3, 3): (("13", "15", "17"), "17"),
    (3, 4): (("25", "33", "37"), "37"),
    (3, 5): (("47", "53", "75"), "75"),
    (3, 6): (("133", "145", "175"), "163"),
    (3, 7): (("225", "331", "367"), "357"),
    (4, 1): (("1", "1", "3", "3"), "3"),
    (4, 2): (("5", "7", "7", "7"), "7"),
    (4, 3): (("13", "15", "15", "17"), "17"),
    (4, 4): (("25", "27", "33", "37"), "37"),
    (4, 5): (("53", "67", "71", "75"), "75"),
    (4, 6): (("135", "135", "147", "163"), "163"),
    (4, 7): (("237", "275", "313", "357"), "357"),
}


def octal_to_taps(octal, m: int) -> list[int]:
    """Octal digits (``171`` or ``"171"``) to an (m+1)-bit tap list, MSB first."""
    digits = str(octal).strip()
    try:
        value = int(digits, 8)
    except ValueError:
        raise ConfigurationError(f"{octal!r} is not an octal number") from None
    if value < 0 or value >= 1 << (m + 1):
        raise ConfigurationError(f"octal {digits} does not fit in m+1={m + 1} bits")
    return [(value >> (m - i)) & 1 for i in range(m + 1)]


def parse_rate(rate) -> int:
    """Number of coded streams n for a rate such as ``"1/3"``, ``1/3`` or ``3``."""
    if isinstance(rate, int) and rate >= 2:
        return rate
    try:
        frac = Fraction(str(rate)).limit_denominator(8)
    except (ValueError, ZeroDivisionError):
        raise ConfigurationError(f"cannot parse rate {rate!r}") from None
    if frac.numerator != 1 or frac.denominator not in (2, 3, 4):
        raise ConfigurationError(f"rate must be 1/2, 1/3 or 1/4, got {rate!r}")
    return frac.denominator


@dataclass(frozen=True)
class ConvCodeSpec:
    m: int
    generators: tuple[tuple[int, ...], ...]
    feedback: tuple[int, ...] | None = None
    tail_biting: bool = False

    def __post_init__(self):
        if not 1 <= self.m <= 7:
            raise ConfigurationError(f"memory m={self.m} outside 1..7")
        if not 2 <= len(self.generators) <= 4:
            raise ConfigurationError(f"need 2..4 generator streams, got {len(self.generators)}")
        fb = self.feedback if self.feedback is not None else (1,) + (0,) * self.m
        object.__setattr__(self, "feedback", tuple(int(b) for b in fb))
        object.__setattr__(self, "generators",
                           tuple(tuple(int(b) for b in g) for g in self.generators))
        for taps in self.generators + (self.feedback,):
            if len(taps) != self.m + 1 or any(b not in (0, 1) for b in taps):
                raise ConfigurationError(f"tap vector {taps} is not {self.m + 1} binary entries")
        if self.feedback[0] != 1:
            raise ConfigurationError("feedback leading coefficient must be 1")

    @property
    def n(self) -> int:
        return len(self.generators)

    @property
    def n_states(self) -> int:
        return 1 << self.m

    @property
    def recursive(self) -> bool:
        return any(self.feedback[1:])

    @classmethod
    def from_octal(cls, generators, feedback=None, m: int | None = None,
                   tail_biting: bool = False) -> "ConvCodeSpec":
        if m is None:
            m = max(int(str(g), 8).bit_length() for g in list(generators) + [feedback or 1]) - 1
        fb = octal_to_taps(feedback, m) if feedback is not None else None
        return cls(m, tuple(tuple(octal_to_taps(g, m)) for g in generators), fb, tail_biting)

    @classmethod
    def from_table(cls, rate, m: int, tail_biting: bool = False) -> "ConvCodeSpec":
        n = parse_rate(rate)
        if (n, m) not in GENERATOR_TABLE:
            raise ConfigurationError(f"no table entry for rate 1/{n}, m={m}")
        gens, fb = GENERATOR_TABLE[(n, m)]
        return cls.from_octal(gens, fb, m=m, tail_biting=tail_biting)

    def label(self) -> str:
        def octal(taps):
            return format(int("".join(map(str, taps)), 2), "o")
        gens = ",".join(octal(g) for g in self.generators)
        tb = "-tb" if self.tail_biting else ""
        return f"rsc(m={self.m};g={gens};fb={octal(self.feedback)}){tb}"


@dataclass(frozen=True)
class DelayConstraint:
    """Decoder lookahead D  (rate k/n with k = 1, so the Viterbi window w = D)."""

    D: int

    def __post_init__(self):
        if self.D < 0:
            raise ConfigurationError(f"delay D must be >= 0, got {self.D}")

    @property
    def window(self) -> int:
        return self.D

    @staticmethod
    def delay_for(k: int, w: int) -> int:
        return k - 1 + k * w


@dataclass
class Trellis:
    next_state: np.ndarray   # (S, 2)
    outputs: np.ndarray      # (S, 2, n) bits
    pred_state: np.ndarray   # (S, 2) predecessors, ascending
    pred_input: np.ndarray   # (S, 2)

    @classmethod
    def build(cls, spec: ConvCodeSpec) -> "Trellis":
        m, S = spec.m, spec.n_states
        ns = np.zeros((S, 2), dtype=np.int64)
        out = np.zeros((S, 2, spec.n), dtype=np.int8)
        for s in range(S):
            reg = [(s >> (m - 1 - i)) & 1 for i in range(m)]   # a[t-1] .. a[t-m]
            fbsum = sum(f * r for f, r in zip(spec.feedback[1:], reg)) & 1
            for u in (0, 1):
                a = u ^ fbsum
                full = [a] + reg
                for j, g in enumerate(spec.generators):
                    out[s, u, j] = sum(x * y for x, y in zip(g, full)) & 1
                ns[s, u] = (a << (m - 1)) | (s >> 1)
        pred_s = np.zeros((S, 2), dtype=np.int64)
        pred_u = np.zeros((S, 2), dtype=np.int64)
        fill = np.zeros(S, dtype=np.int64)
        for s in range(S):
            for u in (0, 1):
                t = ns[s, u]
                pred_s[t, fill[t]] = s
                pred_u[t, fill[t]] = u
                fill[t] += 1
        if not np.all(fill == 2):
            raise ConfigurationError("trellis is not a 2-to-1 shift-register graph")
        return cls(ns, out, pred_s, pred_u)


@dataclass
class ConvEncoder:
    """Encoder holding a precomputed trellis and tail-biting start states."""

    spec: ConvCodeSpec
    trellis: Trellis = field(init=False)

    def __post_init__(self):
        self.trellis = Trellis.build(self.spec)

    def state_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """GF(2) matrices with ``state' = A state + B u`` (state as MSB-first bits)."""
        m = self.spec.m
        A = np.zeros((m, m), dtype=np.int64)
        A[0, :] = self.spec.feedback[1:]
        for i in range(1, m):
            A[i, i - 1] = 1
        B = np.zeros(m, dtype=np.int64)
        B[0] = 1
        return A, B

    def tail_biting_start(self, final_zero_state: np.ndarray, K: int):
        """Start states s0 solving (I + A^K) s0 = s_zs, or None if singular."""
        A, _ = self.state_matrix()
        m = self.spec.m
        AK = np.eye(m, dtype=np.int64)
        base, e = A.copy(), K
        while e:
            if e & 1:
                AK = AK @ base % 2
            base = base @ base % 2
            e >>= 1
        M = (np.eye(m, dtype=np.int64) + AK) % 2
        inv = _gf2_inverse(M)
        if inv is None:
            return None
        bits = _state_bits(final_zero_state, m)          # (B, m)
        start_bits = bits @ inv.T % 2
        return _bits_state(start_bits)

    def tail_biting_ok(self, K: int) -> bool:
        return self.tail_biting_start(np.zeros(1, dtype=np.int64), K) is not None

    def run(self, msg: np.ndarray, start: np.ndarray | None = None):
        msg = np.atleast_2d(msg)
        B, K = msg.shape
        state = np.zeros(B, dtype=np.int64) if start is None else start.astype(np.int64)
        out = np.empty((B, K, self.spec.n), dtype=np.int8)
        ns, op = self.trellis.next_state, self.trellis.outputs
        for t in range(K):
            u = msg[:, t]
            out[:, t] = op[state, u]
            state = ns[state, u]
        return out.reshape(B, K * self.spec.n), state

    def encode(self, msg) -> np.ndarray:
        """Coded bits (B, K*n) for messages (B, K); zero start unless tail-biting."""
        msg = np.asarray(msg)
        single = msg.ndim == 1
        msg = np.atleast_2d(msg)
        if not np.all((msg == 0) | (msg == 1)):
            raise InputError("conv_encode: message must be binary")
        msg = msg.astype(np.int64)
        start = None
        if self.spec.tail_biting:
            _, zs = self.run(msg)
            start = self.tail_biting_start(zs, msg.shape[1])
        code, _ = self.run(msg, start)
        return code[0] if single else code


def _state_bits(states: np.ndarray, m: int) -> np.ndarray:
    return (states[:, None] >> (m - 1 - np.arange(m))[None, :]) & 1


def _bits_state(bits: np.ndarray) -> np.ndarray:
    m = bits.shape[1]
    return (bits << (m - 1 - np.arange(m))[None, :]).sum(axis=1)


def _gf2_inverse(M: np.ndarray):
    m = M.shape[0]
    aug = np.concatenate([M % 2, np.eye(m, dtype=np.int64)], axis=1)
    for col in range(m):
        pivots = np.nonzero(aug[col:, col])[0]
        if len(pivots) == 0:
            return None
        p = col + pivots[0]
        aug[[col, p]] = aug[[p, col]]
        for r in range(m):
            if r != col and aug[r, col]:
                aug[r] ^= aug[col]
    return aug[:, m:]


def conv_encode(msg, spec: ConvCodeSpec) -> np.ndarray:
    return ConvEncoder(spec).encode(msg)


def bpsk_modulate(bits) -> np.ndarray:
    bits = np.asarray(bits)
    return 2.0 * bits.astype(np.float64) - 1.0


def radar_clip_preprocess(y, threshold: float) -> np.ndarray:
    if not threshold > 0:
        raise ConfigurationError(f"clip threshold must be positive, got {threshold}")
    return np.clip(np.asarray(y, dtype=np.float64), -threshold, threshold)


@dataclass(frozen=True)
class Metric:
    """Branch metric: ``gaussian``, ``atn`` (Student-t log-likelihood) or ``radar_clip``.

    ``radar_clip`` clamps the received values to +-threshold and then scores
    them with the Gaussian metric.
    """

    kind: str = "gaussian"
    sigma: float = 1.0
    nu: float = 3.0
    threshold: float | None = None

    @classmethod
    def matched(cls, channel: ChannelSpec) -> "Metric":
        """Metric that knows the true channel law (CSIR)."""
        if channel.kind == "atn":
            return cls("atn", sigma=channel.sigma, nu=channel.nu)
        return cls("gaussian", sigma=max(channel.sigma, 1e-12))

    @classmethod
    def radar_heuristic(cls, channel: ChannelSpec, k: float = 3.0) -> "Metric":
        return cls("radar_clip", sigma=max(channel.sigma, 1e-12), threshold=1.0 + k * channel.sigma)

    def symbol_scores(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Log-likelihood of each received value for symbols -1 and +1."""
        if self.kind == "radar_clip":
            y = radar_clip_preprocess(y, self.threshold)
            law = ChannelSpec("awgn", _sigma_to_snr(self.sigma))
        elif self.kind == "atn":
            law = ChannelSpec("atn", _sigma_to_snr(self.sigma), nu=self.nu)
        elif self.kind == "gaussian":
            law = ChannelSpec("awgn", _sigma_to_snr(self.sigma))
        else:
            raise ConfigurationError(f"unknown metric {self.kind!r}")
        return channel_loglik(y, -1.0, law), channel_loglik(y, 1.0, law)


def _sigma_to_snr(sigma: float) -> float:
    return -20.0 * np.log10(sigma)


def branch_metrics(y: np.ndarray, spec: ConvCodeSpec, metric: Metric) -> np.ndarray:
    """Per-step scores for every n-bit output pattern: (B, K, 2**n).

    Stream scores are summed left to right so every consumer sees identical
    floating-point values.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = spec.n
    if y.shape[1] % n:
        raise InputError(f"received length {y.shape[1]} is not a multiple of n={n}")
    B, K = y.shape[0], y.shape[1] // n
    neg, pos = metric.symbol_scores(y.reshape(B, K, n))
    patterns = np.arange(1 << n)
    out = np.zeros((B, K, 1 << n))
    for j in range(n):
        bit = (patterns >> (n - 1 - j)) & 1
        out = out + np.where(bit[None, None, :] == 1, pos[:, :, j, None], neg[:, :, j, None])
    return out


def _pattern_index(outputs: np.ndarray) -> np.ndarray:
    n = outputs.shape[-1]
    weights = 1 << (n - 1 - np.arange(n))
    return (outputs.astype(np.int64) * weights).sum(axis=-1)


def viterbi_decode(y, spec: ConvCodeSpec, metric: Metric | None = None,
                   delay: DelayConstraint | int | None = None,
                   traceback_len: int | None = None) -> np.ndarray:
    """Decode received symbols (B, K*n) to bits (B, K).

    ``delay=None`` is full-block decoding.  With a delay D, bit t is
    committed from the best survivor after branch ``min(t + D, K - 1)``.
    Ties go to the lower state index, then to the input-0 branch.  Tail-biting
    full-block decoding runs over a circularly extended block with
    ``traceback_len`` (default 5(m+1)) branches wrapped on each side.
    """
    metric = metric or Metric()
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    bm = branch_metrics(y, spec, metric)
    trellis = Trellis.build(spec)
    if isinstance(delay, DelayConstraint):
        delay = delay.D
    tail_biting = spec.tail_biting and ConvEncoder(spec).tail_biting_ok(bm.shape[1])
    if delay is None and tail_biting:
        L = traceback_len if traceback_len is not None else 5 * (spec.m + 1)
        K = bm.shape[1]
        idx = np.arange(-L, K + L) % K
        bits = _viterbi(bm[:, idx], trellis, uniform_start=True, window=None)
        out = bits[:, L:L + K]
    else:
        window = None if delay is None else int(delay)
        if window is not None and window < 0:
            raise ConfigurationError(f"delay must be >= 0, got {window}")
        out = _viterbi(bm, trellis, uniform_start=tail_biting, window=window)
    return out[0] if single else out


def _viterbi(bm: np.ndarray, trellis: Trellis, uniform_start: bool, window: int | None):
    B, K, _ = bm.shape
    S = trellis.next_state.shape[0]
    pat = _pattern_index(trellis.outputs)                    # (S, 2)
    ps, pu = trellis.pred_state, trellis.pred_input          # (S, 2)
    inc_pat = pat[ps, pu]                                    # (S, 2)
    pm = np.zeros((B, S)) if uniform_start else np.full((B, S), -np.inf)
    if not uniform_start:
        pm[:, 0] = 0.0
    choice = np.empty((K, B, S), dtype=np.int8)
    decided = np.empty((B, K), dtype=np.int8)
    rows = np.arange(B)

    def trace(t_end: int, best: np.ndarray, lo: int):
        s = best
        for t in range(t_end, lo - 1, -1):
            c = choice[t, rows, s]
            decided[:, t] = pu[s, c]
            s = ps[s, c]

    for t in range(K):
        cand = pm[:, ps] + bm[:, t][:, inc_pat]              # (B, S, 2)
        c = np.argmax(cand, axis=2)                          # first max -> lower state
        choice[t] = c
        pm = np.take_along_axis(cand, c[..., None], axis=2)[..., 0]
        if window is not None and t >= window:
            s = np.argmax(pm, axis=1)
            for tt in range(t, t - window - 1, -1):
                cc = choice[tt, rows, s]
                if tt == t - window:
                    decided[:, tt] = pu[s, cc]
                s = ps[s, cc]
    best = np.argmax(pm, axis=1)
    lo = 0 if window is None else max(K - window, 0)
    trace(K - 1, best, lo)
    return decided


def ml_decode_bruteforce(y, spec: ConvCodeSpec, metric: Metric | None = None,
                         max_len: int = 16) -> np.ndarray:
    """Exhaustive maximum-likelihood decoding; ties go to the smallest message."""
    metric = metric or Metric()
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    K = y.shape[1] // spec.n
    if K > max_len:
        raise UsageError(f"brute-force ML limited to K <= {max_len}, got {K}")
    msgs = all_messages(K)
    codes = ConvEncoder(spec).encode(msgs).reshape(len(msgs), K, spec.n)
    pidx = _pattern_index(codes)                             # (M, K)
    bm = branch_metrics(y, spec, metric)                     # (B, K, P)
    out = np.empty((y.shape[0], K), dtype=np.int8)
    for b in range(y.shape[0]):
        score = np.zeros(len(msgs))
        for t in range(K):
            score = score + bm[b, t][pidx[:, t]]
        out[b] = msgs[int(np.argmax(score))]
    return out[0] if single else out


def all_messages(K: int) -> np.ndarray:
    """All 2**K binary messages in lexicographic order, first bit most significant."""
    idx = np.arange(1 << K)
    return ((idx[:, None] >> (K - 1 - np.arange(K))[None, :]) & 1).astype(np.int8)
