"""Distortion metrics, tau/lambda selection, per-block RDO, and the FD-RDO reference.

Two distortion families drive the candidate search: plain SSE, and IDSE, the
sketched-Jacobian quadratic ||J_s_i e_i||^2 + tau ||e_i||^2 evaluated either on
pixel errors or on transform-domain coefficient errors (equivalent by
orthonormality; the transform-domain path is the cheap one used in practice).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from idsecodec.codec import (
    MB_SIZE,
    SUB_SIZE,
    CodingCandidate,
    TransformSpec,
    enumerate_candidates,
    mux,
)
from idsecodec.core import BlockGrid, GridMismatchError, ImagePlane, assemble_blocks, split_blocks
from idsecodec.sketch import SketchedJacobian, block_slice, frobenius_sq_per_block, spectral_norm_sq
from idsecodec.toyfe import ToyFeatureExtractor, feature_distance

QP_MIN, QP_MAX = 0, 51
N_PB = MB_SIZE * MB_SIZE


@dataclass
class MetricConfig:
    """RDO metric selection.

    kind "sse" ignores all Jacobian fields.  For "idse", tau = alpha *
    tau_tilde regularizes toward SSE; tau_tilde is computed from the sketch
    when left unset.  domain picks where errors are priced: "transform"
    (default, matches the deployed algorithm) or "pixel" (reference path).
    """

    kind: str = "sse"
    alpha: float = 1.0
    lambda_c: float = 0.57
    domain: str = "transform"
    tau_tilde: float | None = None

    def __post_init__(self):
        if self.kind not in ("sse", "idse"):
            raise ValueError(f"metric kind must be 'sse' or 'idse', got {self.kind!r}")
        if self.domain not in ("pixel", "transform"):
            raise ValueError(f"domain must be 'pixel' or 'transform', got {self.domain!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.lambda_c <= 0:
            raise ValueError(f"lambda_c must be positive, got {self.lambda_c}")
        if self.tau_tilde is not None and self.tau_tilde < 0:
            raise ValueError(f"tau_tilde must be >= 0, got {self.tau_tilde}")


# ---------------------------------------------------------------------------
# Metrics

def sse(e: np.ndarray) -> float:
    """Sum of squared errors over any layout."""
    r = np.ravel(e)
    return float(r @ r)


def idse_block(Jb: np.ndarray, e: np.ndarray, tau: float) -> float:
    """||Jb e||^2 + tau ||e||^2 on a pixel-domain block error."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    r = np.ravel(e)
    if Jb.ndim != 2 or Jb.shape[1] != r.size:
        raise ValueError(f"Jacobian slice {Jb.shape} does not match error length {r.size}")
    v = Jb @ r
    return float(v @ v + tau * (r @ r))


def idse_block_transform(Bi: np.ndarray, e_y: np.ndarray, tau: float) -> float:
    """||Bi e_y||^2 + tau ||e_y||^2 on a transform-domain coefficient error."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    r = np.ravel(e_y)
    if Bi.ndim != 2 or Bi.shape[1] != r.size:
        raise ValueError(f"metric matrix {Bi.shape} does not match error length {r.size}")
    v = Bi @ r
    return float(v @ v + tau * (r @ r))


def compute_tau_tilde(J: SketchedJacobian) -> float:
    """Squared spectral norm of the sketch; the scale on which SSE leaks into IDSE."""
    return spectral_norm_sq(J)


def _qp_scale(qp: int) -> float:
    return 2.0 ** ((qp - 12) / 3.0)


def lambda_sse(qp: int, c: float) -> float:
    """High-rate Lagrangian for the SSE metric: c * 2^((qp-12)/3)."""
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    return c * _qp_scale(qp)


def compute_lambda(qp: int, c: float, J: SketchedJacobian, grid: BlockGrid, tau: float) -> float:
    """IDSE Lagrangian: c * (mean per-pixel Frobenius mass + tau) * 2^((qp-12)/3)."""
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    frob = float(frobenius_sq_per_block(J, grid).sum())
    return c * (frob / (N_PB * grid.n_blocks) + tau) * _qp_scale(qp)


# ---------------------------------------------------------------------------
# Per-block metric state

@lru_cache(maxsize=None)
def _synthesis_operator(size: int) -> np.ndarray:
    u = TransformSpec(size).operator()
    u.setflags(write=False)
    return u


@lru_cache(maxsize=1)
def _sub_block_columns() -> tuple[np.ndarray, ...]:
    """Row-major pixel indices of each 4x4 sub-block inside the 16x16 block."""
    cols = []
    n = MB_SIZE // SUB_SIZE
    for kr in range(n):
        for kc in range(n):
            rows = np.arange(kr * SUB_SIZE, (kr + 1) * SUB_SIZE)[:, None] * MB_SIZE
            cc = np.arange(kc * SUB_SIZE, (kc + 1) * SUB_SIZE)[None, :]
            cols.append((rows + cc).ravel())
    return tuple(cols)


def _column_sq_norms(m: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", m, m)


@dataclass(eq=False)
class BlockMetricState:
    """Prepared per-block pricing data.

    For transform-domain IDSE, b_whole and b_split are the metric matrices
    J_s_i U for each partition's coefficient layout; in the pixel domain
    b_whole holds the raw Jacobian slice and applies to either partition.
    """

    kind: str
    domain: str
    tau: float = 0.0
    b_whole: np.ndarray | None = None
    b_split: np.ndarray | None = None

    def distortions(self, candidates: list[CodingCandidate]) -> np.ndarray:
        """Metric distortion for each candidate, batched per partition."""
        if self.kind == "sse":
            attr = "pixel_error" if self.domain == "pixel" else "coeff_error"
            errors = np.stack([np.ravel(getattr(c, attr)) for c in candidates], axis=1)
            return _column_sq_norms(errors)
        if self.domain == "pixel":
            errors = np.stack([np.ravel(c.pixel_error) for c in candidates], axis=1)
            proj = self.b_whole @ errors
            return _column_sq_norms(proj) + self.tau * _column_sq_norms(errors)
        out = np.empty(len(candidates))
        for partition, matrix in (("whole16", self.b_whole), ("split4", self.b_split)):
            idx = [k for k, c in enumerate(candidates) if c.partition == partition]
            if not idx:
                continue
            errors = np.stack([candidates[k].coeff_error for k in idx], axis=1)
            proj = matrix @ errors
            out[idx] = _column_sq_norms(proj) + self.tau * _column_sq_norms(errors)
        return out


def build_metric_state(
    config: MetricConfig, tau: float, J: SketchedJacobian | None, grid: BlockGrid, index: int
) -> BlockMetricState:
    if config.kind == "sse":
        return BlockMetricState(kind="sse", domain=config.domain)
    Jb = block_slice(J, grid, index)
    if config.domain == "pixel":
        return BlockMetricState(kind="idse", domain="pixel", tau=tau, b_whole=Jb)
    u4 = _synthesis_operator(SUB_SIZE)
    b_split = np.hstack([Jb[:, cols] @ u4 for cols in _sub_block_columns()])
    return BlockMetricState(
        kind="idse",
        domain="transform",
        tau=tau,
        b_whole=Jb @ _synthesis_operator(MB_SIZE),
        b_split=b_split,
    )


# ---------------------------------------------------------------------------
# Decisions

@dataclass(frozen=True)
class BlockDecision:
    index: int
    candidate: int
    partition: str
    dqp: int
    distortion: float
    bits: int
    cost: float
    d_sse: float
    d_idse: float


@dataclass(eq=False)
class RdoDecision:
    blocks: list[BlockDecision]
    lambda_value: float
    config: MetricConfig

    @property
    def total_bits(self) -> int:
        return sum(b.bits for b in self.blocks)


def rdo_block(
    candidates: list[CodingCandidate],
    state: BlockMetricState,
    lam: float,
    index: int = 0,
) -> BlockDecision:
    """Pick argmin of distortion + lambda * bits; ties go to fewer bits, then lower index."""
    if not candidates:
        raise ValueError("need at least one candidate")
    d = state.distortions(candidates)
    bits = np.array([c.bits for c in candidates])
    costs = d + lam * bits
    best = min(range(len(candidates)), key=lambda k: (costs[k], bits[k], k))
    chosen = candidates[best]
    return BlockDecision(
        index=index,
        candidate=best,
        partition=chosen.partition,
        dqp=chosen.dqp,
        distortion=float(d[best]),
        bits=int(bits[best]),
        cost=float(costs[best]),
        d_sse=sse(chosen.pixel_error),
        d_idse=float(d[best]) if state.kind == "idse" else math.nan,
    )


def format_stats(decision: RdoDecision) -> str:
    """Line-delimited per-block records: index, partition, dqp, d_sse, d_idse, bits, cost."""
    lines = ["# block,partition,dqp,d_sse,d_idse,bits,cost"]
    for b in decision.blocks:
        lines.append(
            f"{b.index},{b.partition},{b.dqp},{b.d_sse:.17g},{b.d_idse:.17g},{b.bits},{b.cost:.17g}"
        )
    return "\n".join(lines) + "\n"


def encode_with_rdo(
    plane: ImagePlane,
    qp: int,
    config: MetricConfig | None = None,
    J: SketchedJacobian | None = None,
    fe: ToyFeatureExtractor | None = None,
    threads: int = 1,
) -> tuple[bytes, RdoDecision, dict]:
    """Full encoder: per-block candidate search, then bitstream assembly.

    Returns (bitstream bytes, decisions, stats).  stats carries the encoder's
    own reconstruction so closed-loop checks can compare against the decoder.
    """
    config = config or MetricConfig()
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {qp}")
    grid = plane.grid
    tau = 0.0
    tau_tilde = config.tau_tilde
    if config.kind == "idse":
        if J is None:
            raise ValueError("idse metric requires a sketched Jacobian")
        if (J.width, J.height) != (plane.width, plane.height):
            raise GridMismatchError(
                f"sketch grid {J.width}x{J.height} does not match "
                f"padded image {plane.width}x{plane.height}"
            )
        if config.alpha > 0.0:
            if tau_tilde is None:
                tau_tilde = compute_tau_tilde(J)
            tau = config.alpha * tau_tilde
        lam = compute_lambda(qp, config.lambda_c, J, grid, tau)
    else:
        lam = lambda_sse(qp, config.lambda_c)

    blocks = split_blocks(plane)

    def decide(i: int) -> tuple[BlockDecision, CodingCandidate]:
        cands = enumerate_candidates(blocks[i], qp)
        state = build_metric_state(config, tau, J, grid, i)
        decision = rdo_block(cands, state, lam, index=i)
        return decision, cands[decision.candidate]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(decide, range(grid.n_blocks)))
    else:
        results = [decide(i) for i in range(grid.n_blocks)]

    decisions = [r[0] for r in results]
    chosen = [r[1] for r in results]
    stream = mux(plane, qp, config.kind, chosen)
    recon = assemble_blocks(np.stack([c.recon for c in chosen]), grid)

    mse = float(np.mean((recon - plane.pixels) ** 2))
    stats = {
        "lambda": lam,
        "tau": tau,
        "tau_tilde": tau_tilde,
        "total_bits": sum(d.bits for d in decisions),
        "stream_bytes": len(stream),
        "bpp": 8.0 * len(stream) / plane.n_pixels,
        "psnr": math.inf if mse == 0.0 else 10.0 * math.log10(255.0**2 / mse),
        "recon": recon,
    }
    if fe is not None:
        stats["fd"] = feature_distance(fe, plane.pixels, recon)
    return stream, RdoDecision(decisions, lam, config), stats


def fd_rdo_reference(
    plane: ImagePlane, qp: int, fe: ToyFeatureExtractor, lam: float
) -> list[BlockDecision]:
    """Greedy one-sweep reference optimizer pricing true feature distance.

    Visits blocks in raster order; for each, evaluates the exact FD of the
    whole image for all 18 candidates with earlier blocks fixed at their
    chosen reconstruction and later blocks still pristine.  This is a greedy
    approximation of the intractable joint search; it is exact when
    cross-block feature coupling vanishes.  Desk-scale only.
    """
    if plane.width > 64 or plane.height > 64:
        raise ValueError("reference optimizer is limited to images up to 64x64")
    grid = plane.grid
    recon = plane.pixels.copy()
    out = []
    for i in range(grid.n_blocks):
        r0, c0 = grid.block_origin(i)
        cands = enumerate_candidates(plane.pixels[r0 : r0 + MB_SIZE, c0 : c0 + MB_SIZE], qp)
        trial = recon.copy()
        d = np.empty(len(cands))
        for k, cand in enumerate(cands):
            trial[r0 : r0 + MB_SIZE, c0 : c0 + MB_SIZE] = cand.recon
            d[k] = feature_distance(fe, plane.pixels, trial)
        bits = np.array([c.bits for c in cands])
        costs = d + lam * bits
        best = min(range(len(cands)), key=lambda k: (costs[k], bits[k], k))
        chosen = cands[best]
        recon[r0 : r0 + MB_SIZE, c0 : c0 + MB_SIZE] = chosen.recon
        out.append(
            BlockDecision(
                index=i,
                candidate=best,
                partition=chosen.partition,
                dqp=chosen.dqp,
                distortion=float(d[best]),
                bits=int(bits[best]),
                cost=float(costs[best]),
                d_sse=sse(chosen.pixel_error),
                d_idse=math.nan,
            )
        )
    return out


def diagonal_dominance_stats(
    fe: ToyFeatureExtractor, images: list[ImagePlane], qps: list[int]
) -> dict:
    """Distribution of normalized block bilinear forms over real coding residuals.

    For each image and QP, codes the image with SSE-RDO, forms per-block
    residuals e_i, and normalizes u_i = J_i e_i by ||e_i|| ||J||_F.  Returns
    medians and 15th/85th percentiles of the diagonal terms u_i.u_i and the
    off-diagonal magnitudes |u_i.u_j|.
    """
    diag_vals: list[float] = []
    off_vals: list[float] = []
    for plane in images:
        grid = plane.grid
        jac = fe.dense_jacobian(plane.pixels)
        j_frob = float(np.linalg.norm(jac))
        for qp in qps:
            _, _, stats = encode_with_rdo(plane, qp, MetricConfig(kind="sse"))
            err = (stats["recon"] - plane.pixels).ravel()
            rows = []
            for i in range(grid.n_blocks):
                cols = grid.block_pixel_indices(i)
                e_i = err[cols]
                norm = float(np.linalg.norm(e_i))
                if norm == 0.0:
                    continue  # perfectly coded block: normalization undefined
                rows.append((jac[:, cols] @ e_i) / (norm * j_frob))
            if len(rows) < 2:
                continue
            b = np.stack(rows)
            gram = b @ b.T
            diag_vals.extend(np.diag(gram).tolist())
            iu = np.triu_indices(len(rows), k=1)
            off_vals.extend(np.abs(gram[iu]).tolist())
    diag = np.array(diag_vals)
    off = np.array(off_vals)
    return {
        "n_diag": int(diag.size),
        "n_offdiag": int(off.size),
        "diag_median": float(np.median(diag)),
        "diag_p15": float(np.percentile(diag, 15)),
        "diag_p85": float(np.percentile(diag, 85)),
        "offdiag_median": float(np.median(off)),
        "offdiag_p15": float(np.percentile(off, 15)),
        "offdiag_p85": float(np.percentile(off, 85)),
        "qps": list(qps),
    }
