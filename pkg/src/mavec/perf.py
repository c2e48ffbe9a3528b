"""Performance model: message censuses, per-layer metrics, a calibrated
analytic tier, and host-I/O sensitivity sweeps.

Two tiers produce the same LayerMetrics record:

- exact tier: ``collect`` reads the counters of a finished simulation
  trace.  Cycle integrals come from the kernel ledger (words in flight
  per cycle, FPU-active sites per cycle).
- analytic tier: ``analytic_layer`` predicts cycles from closed-form
  message counts plus a fitted CalibrationModel.  The model refuses to
  run uncalibrated; ``python -m mavec.calibrate`` writes the constants.

The cycle breakdown normalizes four raw quantities into fractions:

    message_transfer   word-cycles spent in flight or queued
                       (exact: in-flight integral; analytic: words
                       created x fitted mean residency)
    operation          site-cycles with the FPU busy
    weight_load        host-link cycles occupied by weight words
    host_to_offchip    exposed DRAM transfer time for host-sourced
                       bytes (see DRAM_EXPOSURE)

Reuse accounting (all in MB of 4-byte values):

    temporal   bytes re-read from weights held stationary across a
               pass: 4 B x weight words x (waves - 1)
    spatial    bytes saved by in-fabric multicast: 4 B x (pixel copies
               spawned down + spawned right); identically 4 B x
               (products - fresh pixel injections)
    reduction  bytes elided by folding partials on the array instead
               of writing them out: 4 B x (intermediate values
               produced - final values handed off)

Bandwidth tables give GB/s per host-link generation/lane count and per
off-chip memory part; at clock_ghz the host link injects
pcie_gbps / (8 x clock_ghz) words per cycle (64-bit words).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fabric.simulator import DEFAULT_HOST_RATE, LayerTrace
from .mapping import ArrayGeom, FoldPlan, LayerSpec, build_fold_plan
from .schedule import fresh_pixels_per_pass

WORD_BYTES = 8
VALUE_BYTES = 4
MB = 1e6

# Fraction of host-sourced bytes whose DRAM fetch time is exposed
# rather than hidden behind the host link and compute.  Sized so the
# whole-network spread across the memory table stays single-digit
# percent, matching a fabric that generates >97% of its traffic
# on-chip.
DRAM_EXPOSURE = 5e-4

# Columns of settle/route margin used by the mapped-occupancy metric:
# an array of width C spends a C/(C+4) share of its span on mapped
# work once edge routing is accounted for.
ROUTE_MARGIN_COLS = 4

PCIE_GBPS = {
    (1, 1): 0.25, (1, 4): 1.0, (1, 8): 2.0, (1, 16): 4.0,
    (2, 1): 0.5, (2, 4): 2.0, (2, 8): 4.0, (2, 16): 8.0,
    (3, 1): 0.98, (3, 4): 3.94, (3, 8): 7.88, (3, 16): 15.8,
    (4, 1): 1.97, (4, 4): 7.88, (4, 8): 15.8, (4, 16): 31.5,
    (5, 1): 3.94, (5, 4): 15.8, (5, 8): 31.5, (5, 16): 63.0,
    (6, 1): 7.88, (6, 4): 31.5, (6, 8): 63.0, (6, 16): 126.0,
}

DRAM_GBPS = {
    "ddr": 0.05, "ddr2": 0.1, "ddr3": 0.2, "ddr4": 0.4, "ddr5": 0.8,
    "lpddr": 0.05, "lpddr2": 0.13, "lpddr3": 0.23, "lpddr4x": 0.53,
    "lpddr5": 0.8, "lpddr5x": 1.0,
    "gddr3": 0.33, "gddr5": 1.13, "gddr5x": 1.5, "gddr6": 3.0,
    "gddr7": 4.5,
}

DEFAULT_PCIE = "6x16"
DEFAULT_DRAM = "gddr7"

DEFAULT_CALIB_PATH = Path(__file__).parent / "data" / "default_calib.json"


def parse_pcie(label: str) -> tuple[int, int]:
    """\"6x16\" -> (6, 16), validated against the bandwidth table."""
    try:
        gen_s, lanes_s = label.lower().split("x")
        key = (int(gen_s), int(lanes_s))
    except ValueError:
        raise ValueError(f"host link must look like '6x16', got {label!r}") from None
    if key not in PCIE_GBPS:
        raise ValueError(
            f"unknown host link {label!r}; generations 1-6, lanes 1/4/8/16"
        )
    return key


def parse_dram(label: str) -> str:
    key = label.lower()
    if key not in DRAM_GBPS:
        known = ", ".join(sorted(DRAM_GBPS))
        raise ValueError(f"unknown memory part {label!r}; known: {known}")
    return key


@dataclass(frozen=True)
class IoConfig:
    """Host-link and off-chip memory operating point."""

    pcie: str = DEFAULT_PCIE
    dram: str = DEFAULT_DRAM
    clock_ghz: float = 1.0

    def __post_init__(self):
        parse_pcie(self.pcie)
        parse_dram(self.dram)
        if self.clock_ghz <= 0:
            raise ValueError("clock_ghz must be positive")

    @property
    def pcie_gbps(self) -> float:
        return PCIE_GBPS[parse_pcie(self.pcie)]

    @property
    def dram_gbps(self) -> float:
        return DRAM_GBPS[parse_dram(self.dram)]

    @property
    def host_words_per_cycle(self) -> float:
        return self.pcie_gbps / (WORD_BYTES * self.clock_ghz)

    @property
    def dram_bytes_per_cycle(self) -> float:
        return self.dram_gbps / self.clock_ghz


BASELINE_IO = IoConfig()


# ------------------------------------------------------------------ census


@dataclass(frozen=True)
class MessageCensus:
    """Closed-form message and FPU-op counts for one layer.

    Mirrors the scheduler and kernel exactly; the counts are asserted
    against live simulation counters in the test suite.
    """

    prog_words: int  # weight loads, host lane
    pixel_words: int  # fresh pixel injections
    relu_words: int  # activation words on the merge lane
    products: int  # multiplies, one deposit word each
    group_words: int  # kernel-column sums moving to their block column
    chain_words: int  # running cross-block partials between fold stops
    copies_right: int  # pixel copies spawned along a row
    copies_down: int  # pixel copies spawned down the rows
    tile_words: int  # stored partial-tile words (one per row/wave/pass)
    handoffs: int  # finished outputs leaving the fabric
    merge_releases: int  # replay directives (not words)
    fpu_ops: int
    pixel_lane: str  # "host" | "l1"

    @property
    def deposits(self) -> int:
        return self.products + self.group_words + self.chain_words

    @property
    def host_words(self) -> int:
        if self.pixel_lane == "host":
            return self.prog_words + self.pixel_words
        return self.prog_words

    @property
    def l1_words(self) -> int:
        extra = 0 if self.pixel_lane == "host" else self.pixel_words
        return extra + self.relu_words

    @property
    def created(self) -> int:
        return (
            self.prog_words
            + self.pixel_words
            + self.relu_words
            + self.deposits
            + self.copies_right
            + self.copies_down
            + self.tile_words
            + self.handoffs
        )

    @property
    def host_weight(self) -> int:
        return self.prog_words

    @property
    def host_image(self) -> int:
        return self.pixel_words if self.pixel_lane == "host" else 0

    @property
    def on_chip_generated(self) -> int:
        return self.created - self.host_weight - self.host_image

    def msg_counts(self) -> dict:
        return {
            "host_weight": self.host_weight,
            "host_image": self.host_image,
            "on_chip_generated": self.on_chip_generated,
        }


def census(spec: LayerSpec, geom: ArrayGeom, pixel_lane: str = "host",
           plan: FoldPlan | None = None) -> MessageCensus:
    if pixel_lane not in ("host", "l1"):
        raise ValueError(f"pixel lane must be host or l1, got {pixel_lane}")
    plan = build_fold_plan(spec, geom) if plan is None else plan
    kh, kw, stride = spec.kh, spec.kw, spec.stride
    waves = spec.waves
    bw = plan.role_map.block_width
    relu = spec.activation == "relu"

    prog = pixels = products = group_w = chain_w = 0
    right = down = tiles = fpu = 0
    for p in plan.passes:
        r_u, b_u = p.rows_used, p.blocks_used
        prog += r_u * b_u * kh * kw
        pixels += fresh_pixels_per_pass(spec, b_u)
        products += waves * r_u * b_u * kh * kw
        group_w += waves * r_u * b_u * (kw - 1)
        # the running partial skips its last hop when the final block
        # column doubles as the pass-fold column
        chain_w += waves * r_u * (b_u - (1 if geom.cols == b_u * bw else 0))
        right += spec.out_h * (spec.out_w - 1) * b_u * kh * max(kw - stride, 0)
        down += waves * (r_u - 1) * b_u * kh * kw
        tiles += waves * r_u
        fpu += waves * r_u * (
            b_u * kh * kw  # multiplies
            + b_u * kw * (kh - 1)  # kernel-row folds
            + b_u * (kw - 1)  # kernel-column folds
            + (b_u - 1)  # cross-block chain adds
        )
    handoffs = relu_w = releases = 0
    ppb = plan.passes_per_band
    for band in range(plan.bands):
        band_rows = next(p.rows_used for p in plan.passes if p.band == band)
        handoffs += waves * band_rows
        relu_w += waves * band_rows if relu else 0
        releases += waves * ppb
        fpu += waves * band_rows * (ppb - 1)  # stored-tile merge adds
        fpu += waves * band_rows if relu else 0

    return MessageCensus(
        prog_words=prog,
        pixel_words=pixels,
        relu_words=relu_w,
        products=products,
        group_words=group_w,
        chain_words=chain_w,
        copies_right=right,
        copies_down=down,
        tile_words=tiles,
        handoffs=handoffs,
        merge_releases=releases,
        fpu_ops=fpu,
        pixel_lane=pixel_lane,
    )


# ------------------------------------------------------------------ metrics


@dataclass
class LayerMetrics:
    """One layer's report row, produced by either tier."""

    name: str
    rows: int
    cols: int
    tier: str  # "exact" | "analytic"
    cycles: float
    macs: int
    msg_counts: dict
    msg_fractions: dict
    cycle_breakdown: dict
    utilization: float
    temporal_mb: float
    spatial_mb: float
    reduction_mb: float
    clock_ghz: float = 1.0
    util_fpu: float | None = None  # trace-true FPU occupancy (exact tier)
    util_active: float | None = None  # trace-true active-site occupancy

    @property
    def latency_kcc(self) -> float:
        return self.cycles / 1e3

    @property
    def gflops(self) -> float:
        return 2.0 * self.macs * self.clock_ghz / self.cycles

    @property
    def total_messages(self) -> int:
        return sum(self.msg_counts.values())

    def row(self) -> dict:
        """Flat CSV row with the externally fixed column names."""
        return {
            "layer": self.name,
            "tier": self.tier,
            "array": f"{self.rows}x{self.cols}",
            "msg_host_weight_pct": 100.0 * self.msg_fractions["host_weight"],
            "cyc_transfer_pct": 100.0 * self.cycle_breakdown["message_transfer"],
            "util_pct": 100.0 * self.utilization,
            "latency_kcc": self.latency_kcc,
            "gflops": self.gflops,
            "temporal_mb": self.temporal_mb,
            "spatial_mb": self.spatial_mb,
            "reduction_mb": self.reduction_mb,
        }


def _normalize(raw: dict) -> dict:
    total = sum(raw.values())
    if total <= 0:
        raise ValueError("cannot normalize an all-zero breakdown")
    return {k: v / total for k, v in raw.items()}


def _breakdown(transfer: float, operation: float, weight_load: float,
               host_offchip: float) -> dict:
    return _normalize(
        {
            "message_transfer": transfer,
            "operation": operation,
            "host_to_offchip": host_offchip,
            "weight_load": weight_load,
        }
    )


def _dram_cycles(host_words: int, io: IoConfig) -> float:
    return WORD_BYTES * host_words * DRAM_EXPOSURE / io.dram_bytes_per_cycle


def mapped_utilization(spec: LayerSpec, geom: ArrayGeom, cycles: float,
                       io: IoConfig, plan: FoldPlan | None = None,
                       cen: MessageCensus | None = None) -> float:
    """Mapped occupancy: array coverage x row fill x duty x route margin.

    - coverage: fraction of columns the fold tiling engages at capacity
    - row fill: time-weighted fraction of rows holding a filter
    - duty: share of the run not stalled on weight reloads
    - route margin: cols/(cols + 4), the mapped share of the span
    """
    plan = build_fold_plan(spec, geom) if plan is None else plan
    cen = census(spec, geom, plan=plan) if cen is None else cen
    rm = plan.role_map
    coverage = min(rm.blocks_per_pass * rm.block_width + 1, geom.cols) / geom.cols
    row_fill = spec.c_out / (plan.bands * geom.rows)
    reload_cycles = cen.prog_words / io.host_words_per_cycle
    duty = max(0.0, 1.0 - reload_cycles / cycles)
    eta = geom.cols / (geom.cols + ROUTE_MARGIN_COLS)
    return coverage * row_fill * duty * eta


def reuse_accounting(spec: LayerSpec, geom: ArrayGeom,
                     counters: dict | None = None,
                     cen: MessageCensus | None = None) -> tuple[float, float, float]:
    """(temporal_mb, spatial_mb, reduction_mb); counter-backed when a
    trace's counters are given, census-backed otherwise."""
    cen = census(spec, geom) if cen is None else cen
    waves = spec.waves
    temporal = VALUE_BYTES * cen.prog_words * (waves - 1)
    if counters is not None:
        spawned = counters["spawned_down"] + counters["spawned_right"]
    else:
        spawned = cen.copies_down + cen.copies_right
    spatial = VALUE_BYTES * spawned
    produced = (
        cen.products
        + cen.group_words  # kernel-column sums that moved
        + cen.tile_words  # per-pass partial tiles
        + cen.chain_words  # running cross-block partials
    )
    reduction = VALUE_BYTES * (produced - cen.handoffs)
    return temporal / MB, spatial / MB, reduction / MB


def collect(trace: LayerTrace, io: IoConfig = BASELINE_IO) -> LayerMetrics:
    """Exact-tier metrics from a finished simulation trace."""
    spec, geom = trace.spec, trace.geom
    c = trace.counters
    plan = build_fold_plan(spec, geom)
    prog_words = trace.words_by_kind.get("prog", 0)
    lane = "host" if trace.host_words > prog_words else "l1"
    cen = census(spec, geom, pixel_lane=lane, plan=plan)
    cycles = float(c["cycles"])
    weight_load = prog_words / io.host_words_per_cycle
    breakdown = _breakdown(
        transfer=float(c["inflight_integral"]),
        operation=float(c["fpu_site_integral"]),
        weight_load=weight_load,
        host_offchip=_dram_cycles(cen.host_words, io),
    )
    t_mb, s_mb, r_mb = reuse_accounting(spec, geom, counters=c, cen=cen)
    sites = geom.rows * geom.cols
    return LayerMetrics(
        name=spec.name,
        rows=geom.rows,
        cols=geom.cols,
        tier="exact",
        cycles=cycles,
        macs=spec.macs,
        msg_counts=cen.msg_counts(),
        msg_fractions=_normalize(cen.msg_counts()),
        cycle_breakdown=breakdown,
        utilization=mapped_utilization(spec, geom, cycles, io, plan, cen),
        temporal_mb=t_mb,
        spatial_mb=s_mb,
        reduction_mb=r_mb,
        clock_ghz=io.clock_ghz,
        util_fpu=c["fpu_site_integral"] / (cycles * sites),
        util_active=c["active_site_integral"] / (cycles * sites),
    )


# ------------------------------------------------------------- calibration


class UncalibratedError(RuntimeError):
    """Raised when the analytic tier runs without fitted constants."""


CALIB_FEATURES = ("slots", "sweeps", "reload", "passes", "one")


def calib_features(spec: LayerSpec, geom: ArrayGeom, io: IoConfig,
                   plan: FoldPlan | None = None) -> np.ndarray:
    """Feature vector for the cycle model.

    slots   wave-slots processed (waves x passes): steady streaming
    sweeps  output-row sweeps (out_h x passes): per-sweep refill burst
    reload  host-link cycles spent on weight words (rate-dependent)
    passes  per-pass pipeline drain/refill
    one     program fill and final drain
    """
    plan = build_fold_plan(spec, geom) if plan is None else plan
    passes = len(plan.passes)
    prog_words = sum(
        p.rows_used * p.blocks_used * spec.kh * spec.kw for p in plan.passes
    )
    return np.array(
        [
            spec.waves * passes,
            spec.out_h * passes,
            prog_words / io.host_words_per_cycle,
            passes,
            1.0,
        ]
    )


@dataclass
class CalibrationModel:
    """Cycle-time and residency constants fitted against exact runs."""

    coef: dict  # feature name -> fitted coefficient
    residency: float  # mean cycles a word spends in flight or queued
    fpu_site_ratio: float  # FPU site-cycles per FPU op (<= 1)
    n_samples: int
    max_latency_err_pct: float
    fit_host_rate: float = DEFAULT_HOST_RATE

    def predict_cycles(self, spec: LayerSpec, geom: ArrayGeom,
                       io: IoConfig = BASELINE_IO,
                       pixel_lane: str = "host",
                       plan: FoldPlan | None = None) -> float:
        plan = build_fold_plan(spec, geom) if plan is None else plan
        feats = calib_features(spec, geom, io, plan)
        x = np.array([self.coef[name] for name in CALIB_FEATURES])
        reload_idx = CALIB_FEATURES.index("reload")
        reload_cycles = x[reload_idx] * feats[reload_idx]
        steady = float(np.dot(x, feats)) - reload_cycles
        # a slow host link can bound the run by pixel injection instead
        if pixel_lane == "host":
            cen = census(spec, geom, pixel_lane="host", plan=plan)
            steady = max(steady, cen.pixel_words / io.host_words_per_cycle)
        return steady + reload_cycles

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        missing = [k for k in CALIB_FEATURES if k not in d.get("coef", {})]
        if missing:
            raise ValueError(f"calibration file lacks coefficients {missing}")
        return cls(**d)

    @classmethod
    def load(cls, path=None) -> "CalibrationModel":
        path = DEFAULT_CALIB_PATH if path is None else Path(path)
        if not Path(path).exists():
            raise UncalibratedError(
                f"no calibration constants at {path}; run "
                f"'python -m mavec.calibrate' to fit them against exact runs"
            )
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def fit(cls, samples: list[dict]) -> "CalibrationModel":
        """samples: dicts with spec, geom, cycles, created, inflight,
        fpu_ops, fpu_sites (from exact runs at the default host rate)."""
        if len(samples) < 2 * len(CALIB_FEATURES):
            raise ValueError(
                f"need at least {2 * len(CALIB_FEATURES)} exact runs, "
                f"got {len(samples)}"
            )
        rows = np.stack(
            [calib_features(s["spec"], s["geom"], BASELINE_IO) for s in samples]
        )
        y = np.array([s["cycles"] for s in samples], dtype=float)
        x, *_ = np.linalg.lstsq(rows, y, rcond=None)
        pred = rows @ x
        err = np.abs(pred - y) / y
        residency = float(
            np.mean([s["inflight"] / s["created"] for s in samples])
        )
        fpu_ratio = float(np.mean([s["fpu_sites"] / s["fpu_ops"] for s in samples]))
        return cls(
            coef={name: float(v) for name, v in zip(CALIB_FEATURES, x)},
            residency=residency,
            fpu_site_ratio=fpu_ratio,
            n_samples=len(samples),
            max_latency_err_pct=float(100.0 * err.max()),
        )


def analytic_layer(spec: LayerSpec, geom: ArrayGeom,
                   io: IoConfig = BASELINE_IO,
                   calib: CalibrationModel | None = None,
                   pixel_lane: str = "host") -> LayerMetrics:
    """Analytic-tier metrics; requires a fitted CalibrationModel."""
    if calib is None:
        raise UncalibratedError(
            "analytic tier needs a CalibrationModel; load one with "
            "CalibrationModel.load() or fit via 'python -m mavec.calibrate'"
        )
    plan = build_fold_plan(spec, geom)
    cen = census(spec, geom, pixel_lane=pixel_lane, plan=plan)
    cycles = calib.predict_cycles(spec, geom, io, pixel_lane, plan)
    weight_load = cen.prog_words / io.host_words_per_cycle
    breakdown = _breakdown(
        transfer=calib.residency * cen.created,
        operation=calib.fpu_site_ratio * cen.fpu_ops,
        weight_load=weight_load,
        host_offchip=_dram_cycles(cen.host_words, io),
    )
    t_mb, s_mb, r_mb = reuse_accounting(spec, geom, cen=cen)
    sites = geom.rows * geom.cols
    return LayerMetrics(
        name=spec.name,
        rows=geom.rows,
        cols=geom.cols,
        tier="analytic",
        cycles=cycles,
        macs=spec.macs,
        msg_counts=cen.msg_counts(),
        msg_fractions=_normalize(cen.msg_counts()),
        cycle_breakdown=breakdown,
        utilization=mapped_utilization(spec, geom, cycles, io, plan, cen),
        temporal_mb=t_mb,
        spatial_mb=s_mb,
        reduction_mb=r_mb,
        clock_ghz=io.clock_ghz,
        util_fpu=calib.fpu_site_ratio * cen.fpu_ops / (cycles * sites),
        util_active=None,
    )


# ------------------------------------------------------------------ network


@dataclass
class NetworkReport:
    """Whole-workload report: per-layer rows plus aggregates."""

    layers: list
    tier: str
    io: IoConfig
    msg_mix: dict = field(init=False)
    cycle_breakdown: dict = field(init=False)
    total_cycles: float = field(init=False)
    dram_cycles: float = field(init=False)

    def __post_init__(self):
        counts = {"host_weight": 0, "host_image": 0, "on_chip_generated": 0}
        raw = {k: 0.0 for k in
               ("message_transfer", "operation", "host_to_offchip", "weight_load")}
        total = 0.0
        host_words = 0
        for m in self.layers:
            for k in counts:
                counts[k] += m.msg_counts[k]
            # recover each layer's raw quantities from its fractions,
            # scaled by its cycle count, so aggregation weights by time
            for k in raw:
                raw[k] += m.cycle_breakdown[k] * m.cycles
            total += m.cycles
            host_words += m.msg_counts["host_weight"] + m.msg_counts["host_image"]
        # exposed off-chip fetch time is serial with the fabric time at
        # the network level, so memory choice moves whole-net latency
        self.dram_cycles = _dram_cycles(host_words, self.io)
        raw["host_to_offchip"] += self.dram_cycles
        total += self.dram_cycles
        self.msg_mix = _normalize(counts) if total else {}
        self.cycle_breakdown = _normalize(raw) if total else {}
        self.total_cycles = total

    @property
    def latency_kcc(self) -> float:
        return self.total_cycles / 1e3

    @property
    def total_messages(self) -> int:
        return sum(m.total_messages for m in self.layers)

    def throughput(self) -> tuple[float, float]:
        """(inferences/s, messages/s) at the report's clock."""
        if not self.layers:
            return 0.0, 0.0
        clock_hz = self.layers[0].clock_ghz * 1e9
        seconds = self.total_cycles / clock_hz
        return 1.0 / seconds, self.total_messages / seconds

    def csv_text(self) -> str:
        if not self.layers:
            return ""
        inf_s, msg_s = self.throughput()
        rows = []
        for m in self.layers:
            row = m.row()
            row["pcie_gbps"] = self.io.pcie_gbps
            row["dram_gbps"] = self.io.dram_gbps
            row["throughput_inf_s"] = inf_s
            row["throughput_msg_s"] = msg_s
            rows.append(row)
        header = list(rows[0].keys())
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_csv_cell(row[k]) for k in header))
        return "\n".join(lines) + "\n"

    def json_summary(self) -> dict:
        inf_s, msg_s = self.throughput()
        return {
            "tier": self.tier,
            "layers": len(self.layers),
            "array": f"{self.layers[0].rows}x{self.layers[0].cols}" if self.layers else None,
            "pcie": self.io.pcie,
            "dram": self.io.dram,
            "clock_ghz": self.io.clock_ghz,
            "msg_mix": self.msg_mix,
            "cycle_breakdown": self.cycle_breakdown,
            "latency_kcc": self.latency_kcc,
            "throughput_inf_s": inf_s,
            "throughput_msg_s": msg_s,
        }


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def network_report(layers: list[LayerSpec], geom: ArrayGeom,
                   io: IoConfig = BASELINE_IO,
                   calib: CalibrationModel | None = None) -> NetworkReport:
    """Analytic-tier report for a layer stack; pixels enter from the
    host for the first layer and from on-chip staging afterwards."""
    metrics = []
    for i, spec in enumerate(layers):
        lane = "host" if i == 0 else "l1"
        metrics.append(analytic_layer(spec, geom, io, calib, pixel_lane=lane))
    return NetworkReport(layers=metrics, tier="analytic", io=io)


def sweep_io(layers: list[LayerSpec], geom: ArrayGeom,
             calib: CalibrationModel | None = None,
             pcie_set: list[str] | None = None,
             dram_set: list[str] | None = None,
             clock_ghz: float = 1.0) -> list[dict]:
    """Throughput at every (host link, memory part) operating point."""
    if not layers:
        return []
    pcie_set = (
        [f"{g}x{l}" for g in range(1, 7) for l in (1, 4, 8, 16)]
        if pcie_set is None
        else pcie_set
    )
    dram_set = sorted(DRAM_GBPS) if dram_set is None else dram_set
    out = []
    for pcie in pcie_set:
        for dram in dram_set:
            io = IoConfig(pcie=pcie, dram=dram, clock_ghz=clock_ghz)
            report = network_report(layers, geom, io, calib)
            inf_s, msg_s = report.throughput()
            out.append(
                {
                    "pcie": pcie,
                    "pcie_gbps": io.pcie_gbps,
                    "dram": dram,
                    "dram_gbps": io.dram_gbps,
                    "latency_kcc": report.latency_kcc,
                    "throughput_inf_s": inf_s,
                    "throughput_msg_s": msg_s,
                }
            )
    return out


def sweep_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[k]) for k in header))
    return "\n".join(lines) + "\n"
