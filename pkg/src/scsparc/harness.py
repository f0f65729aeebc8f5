"""Experiment configuration, orchestration and CSV emission for the CLI.

Every command reads an :class:`ExperimentConfig`, built from an optional JSON
file with command-line overrides on top.  Outputs are CSV (plus a JSON
document for ``vpa``).  Simulation rows are deterministic functions of the
effective configuration and the master seed, whose hash is written into the
CSV header.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .base_matrix import (
    BaseMatrix,
    ColumnProfile,
    CouplingContext,
    average_power,
    from_profile,
    make_upa,
)
from .codec import (
    DesignKind,
    SparcDims,
    amp_decode,
    awgn,
    encode,
    hard_decision,
    make_operator,
    sample_message,
)
from .exceptions import ConfigError, NumericalDivergence
from .metrics import (
    PRF_TOL,
    Policy,
    oracle_prf,
    prf_upa,
    prf_vpa,
    rate_ceilings,
    rpf_upa,
    rpf_vpa,
)
from .state_evolution import se_run
from .vpa import DEFAULT_DELTA, FailureKind, VpaInput, profile_power, run_vpa

EXIT_OK = 0
EXIT_SE_FAILURE = 2
EXIT_POWER_EXCEEDED = 3
EXIT_RATE_INFEASIBLE = 4
EXIT_CONFIG = 64

ALLOCATIONS = ("upa", "vpa", "profile", "reference")

# JSON keys that differ from the attribute names
_ALIASES = {"lambda": "lam", "M": "m", "L": "l", "Lc": "l_c", "Mr": "m_r", "snr": "snr_db"}

# settings that cannot change any output value
_NON_SEMANTIC = ("out", "workers", "config", "timing")


@dataclass
class ExperimentConfig:
    command: str = "se"
    omega: int | None = None
    lam: int | None = None
    sigma2: float = 1.0
    rate: float | None = None
    rate_unit: str = "nats"
    power: float | None = None
    seed: int = 0
    out: str | None = None
    config: str | None = None
    allocation: str = "upa"
    delta: float | list = DEFAULT_DELTA
    profile: str | None = None
    max_iter: int | None = None
    # curves
    sweep: str = "rate"
    grid: list | None = None
    oracle: bool = False
    # simulate
    m: int = 512
    l: int = 30
    l_c: int | None = None
    m_r: int = 12
    snr_db: list = field(default_factory=list)
    trials: int = 100
    design: str = "hadamard"
    amp_iter: int = 100
    psi_mode: str = "online"
    per_iteration: bool = False
    workers: int = 1
    timing: bool = False

    @classmethod
    def from_sources(cls, file_doc: dict | None = None, overrides: dict | None = None) -> "ExperimentConfig":
        """Merge a JSON document with overrides (non-``None`` values win)."""
        names = {f.name for f in dataclasses.fields(cls)}
        values: dict = {}
        for source, label in ((file_doc or {}, "config file"), (overrides or {}, "command line")):
            for key, value in source.items():
                name = _ALIASES.get(key, key)
                if name not in names:
                    raise ConfigError(f"{label}: unknown field {key!r}")
                if value is not None:
                    values[name] = value
        try:
            cfg = cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(name):
            if getattr(self, name) is None:
                raise ConfigError(f"field {name!r} is required for '{self.command}'")

        if self.l_c is not None and self.lam is None:
            self.lam = self.l_c
        if self.lam is not None and self.l_c is not None and self.lam != self.l_c:
            raise ConfigError(f"field 'Lc' ({self.l_c}) must equal 'lambda' ({self.lam})")
        if self.rate_unit not in ("nats", "bits"):
            raise ConfigError(f"field 'rate_unit' must be 'nats' or 'bits', got {self.rate_unit!r}")
        if self.allocation not in ALLOCATIONS:
            raise ConfigError(f"field 'allocation' must be one of {ALLOCATIONS}, got {self.allocation!r}")
        if self.allocation == "profile":
            need("profile")
        if self.profile is not None and not Path(self.profile).is_file():
            raise ConfigError(f"field 'profile': file {self.profile!r} does not exist")
        if self.workers < 1:
            raise ConfigError("field 'workers' must be >= 1")
        if self.allocation == "reference" and self.omega is None and self.lam is None:
            self.omega, self.lam = 4, 15
        if self.allocation != "profile":
            need("omega")
            need("lam")
        if self.command in ("se", "vpa"):
            need("rate")
        if self.command == "vpa":
            need("power")
        if self.command == "se" and self.allocation in ("upa", "vpa"):
            need("power")
        if self.command == "curves":
            if self.sweep not in ("rate", "power"):
                raise ConfigError(f"field 'sweep' must be 'rate' or 'power', got {self.sweep!r}")
            if self.grid is not None and len(self.grid) == 0:
                raise ConfigError("field 'grid' must be non-empty")
        if self.command == "simulate":
            if not self.snr_db:
                raise ConfigError("field 'snr' must list at least one SNR in dB")
            if self.trials < 1:
                raise ConfigError("field 'trials' must be >= 1")
            if self.amp_iter < 1:
                raise ConfigError("field 'amp_iter' must be >= 1")
            if self.design not in [k.value for k in DesignKind]:
                raise ConfigError(f"field 'design' must be gaussian or hadamard, got {self.design!r}")
            if self.psi_mode not in ("online", "se"):
                raise ConfigError(f"field 'psi_mode' must be 'online' or 'se', got {self.psi_mode!r}")
        try:
            if self.omega is not None and self.lam is not None:
                self.context()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def rate_nats(self) -> float | None:
        if self.rate is None:
            return None
        return self.rate * math.log(2.0) if self.rate_unit == "bits" else float(self.rate)

    def context(self, **changes) -> CouplingContext:
        fields = dict(omega=self.omega, lam=self.lam, sigma2=self.sigma2,
                      rate=self.rate_nats, power=self.power)
        fields.update(changes)
        return CouplingContext(**fields)

    def effective(self) -> dict:
        """Output-relevant settings, used for the header and the config hash."""
        doc = dataclasses.asdict(self)
        for key in _NON_SEMANTIC:
            doc.pop(key, None)
        return doc

    def digest(self) -> str:
        blob = json.dumps(self.effective(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def load_profile(path, sigma2: float = 1.0) -> ColumnProfile:
    """Read a profile JSON file, mapping every problem to :class:`ConfigError`."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read profile {path!r}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: profile must be a JSON object")
    for key in ("omega", "lambda", "w"):
        if key not in doc:
            raise ConfigError(f"{path}: missing field {key!r}")
    try:
        return ColumnProfile.from_json(doc, sigma2=sigma2)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: field 'w': {exc}") from exc


def reference_profiles() -> list[dict]:
    """The packaged V-shaped profiles (omega=4, Lambda=15)."""
    text = resources.files("scsparc").joinpath("data/reference_profiles.json").read_text()
    return json.loads(text)["profiles"]


def reference_profile(snr_db: float, sigma2: float = 1.0) -> ColumnProfile:
    for row in reference_profiles():
        if math.isclose(row["snr_db"], snr_db, abs_tol=1e-9):
            ctx = CouplingContext(row["omega"], row["lambda"], sigma2=sigma2)
            k = row["outer_columns"]
            half = [row["outer"]] * k + [row["inner"]] * (ctx.theta - k)
            return ColumnProfile.from_half(ctx, half)
    known = ", ".join(str(r["snr_db"]) for r in reference_profiles())
    raise ConfigError(f"no packaged profile for SNR {snr_db} dB (available: {known})")


def snr_to_power(snr_db: float, sigma2: float = 1.0) -> float:
    return sigma2 * 10.0 ** (snr_db / 10.0)


class AllocationFailure(Exception):
    """VPA could not build an allocation; carries the CLI exit code."""

    def __init__(self, outcome):
        super().__init__(outcome.failure.detail)
        self.outcome = outcome
        self.code = (EXIT_POWER_EXCEEDED if outcome.failure.kind is FailureKind.POWER_EXCEEDED
                     else EXIT_RATE_INFEASIBLE)


def build_allocation(cfg: ExperimentConfig, power: float, rate: float,
                     snr_db: float | None = None) -> BaseMatrix:
    """Base matrix for the configured allocation source at ``power``."""
    if cfg.allocation == "upa":
        return make_upa(cfg.context(power=power, rate=rate))
    if cfg.allocation == "vpa":
        outcome = run_vpa(VpaInput(cfg.context(power=power, rate=rate), cfg.delta))
        if not outcome.success:
            raise AllocationFailure(outcome)
        return from_profile(outcome.profile)
    if cfg.allocation == "reference":
        if snr_db is None:
            raise ConfigError("allocation 'reference' needs an SNR")
        prof = reference_profile(snr_db, cfg.sigma2)
    else:
        prof = load_profile(cfg.profile, cfg.sigma2)
        if cfg.command == "simulate":
            # one profile file serves every SNR: rescale it to this power
            scale = power / profile_power(prof.ctx, prof.w)
            prof = ColumnProfile(prof.ctx, [v * scale for v in prof.w])
    if cfg.omega is not None and (prof.ctx.omega, prof.ctx.lam) != (cfg.omega, cfg.lam):
        raise ConfigError(
            f"profile has (omega, lambda) = ({prof.ctx.omega}, {prof.ctx.lam}), "
            f"config says ({cfg.omega}, {cfg.lam})")
    ctx = prof.ctx.replace(rate=rate, power=profile_power(prof.ctx, prof.w))
    try:
        return from_profile(ColumnProfile(ctx, prof.w))
    except ValueError as exc:
        raise ConfigError(f"profile: {exc}") from exc


def _open_out(path):
    if path is None or path == "-":
        return _Stdout()
    return open(path, "w", newline="")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def _header_lines(cfg: ExperimentConfig) -> list[str]:
    return [
        "# config: " + json.dumps(cfg.effective(), sort_keys=True),
        f"# config_sha256: {cfg.digest()}",
        f"# master_seed: {cfg.seed}",
    ]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


# ---------------------------------------------------------------- se

def cmd_se(cfg: ExperimentConfig) -> int:
    rate = cfg.rate_nats
    try:
        b = build_allocation(cfg, cfg.power, rate)
    except AllocationFailure as exc:
        print(f"allocation failed: {exc}", file=sys.stderr)
        return exc.code
    traj = se_run(b, b.ctx.sigma2, rate, max_iter=cfg.max_iter)
    with _open_out(cfg.out) as fh:
        traj.to_csv(fh)
    return EXIT_OK if traj.success else EXIT_SE_FAILURE


# ---------------------------------------------------------------- vpa

def vpa_report(cfg: ExperimentConfig) -> tuple[dict, int]:
    ctx = cfg.context()
    outcome = run_vpa(VpaInput(ctx, cfg.delta))
    _, rbar_v, _ = rate_ceilings(ctx)
    pv = prf_vpa(ctx, ctx.rate).value
    if ctx.rate >= rbar_v:
        verdict = "rate-infeasible"
    elif ctx.power >= pv:
        verdict = "feasible"
    else:
        verdict = "power-insufficient"
    doc = outcome.to_json()
    doc["report"] = {
        "p_v": None if math.isinf(pv) else pv,
        "rbar_v": rbar_v,
        "verdict": verdict,
    }
    if outcome.success:
        code = EXIT_OK
    elif outcome.failure.kind is FailureKind.POWER_EXCEEDED:
        code = EXIT_POWER_EXCEEDED
    else:
        code = EXIT_RATE_INFEASIBLE
    return doc, code


def cmd_vpa(cfg: ExperimentConfig) -> int:
    doc, code = vpa_report(cfg)
    with _open_out(cfg.out) as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    return code


# ---------------------------------------------------------------- curves

ORACLE_DELTA = 1e-6

CURVE_COLUMNS = ("omega", "lambda", "sigma2", "function", "policy", "rate_or_power", "value", "method")


def default_grid(cfg: ExperimentConfig) -> list[float]:
    if cfg.grid is not None:
        return [float(x) for x in cfg.grid]
    if cfg.sweep == "rate":
        return [round(x, 12) for x in np.linspace(0.1, 0.6, 11)]
    return [round(x, 12) for x in np.geomspace(0.5, 100.0, 12)]


def curve_rows(cfg: ExperimentConfig) -> list[dict]:
    ctx = cfg.context(rate=None, power=None)
    scale = math.log(2.0) if (cfg.sweep == "rate" and cfg.rate_unit == "bits") else 1.0
    rows = []
    for x in default_grid(cfg):
        point = x * scale
        base = {"omega": ctx.omega, "lambda": ctx.lam, "sigma2": ctx.sigma2, "rate_or_power": point}
        if cfg.sweep == "rate":
            pu, pv = prf_upa(ctx, point), prf_vpa(ctx, point)
            if not (pu.infinite or pv.infinite) and pv.value > pu.value * (1.0 + 2 * PRF_TOL):
                raise AssertionError(f"P_V={pv.value} exceeds P_U={pu.value} at R={point}")
            pair = ((Policy.UPA, pu.value, pu.method.value), (Policy.VPA, pv.value, pv.method.value))
            function = "prf"
        else:
            ru, rv = rpf_upa(ctx, point), rpf_vpa(ctx, point)
            if rv < ru * (1.0 - 2 * PRF_TOL):
                raise AssertionError(f"R_V={rv} is below R_U={ru} at P={point}")
            pair = ((Policy.UPA, ru, "ClosedForm"), (Policy.VPA, rv, "Bisection"))
            function = "rpf"
        for policy, value, method in pair:
            row = dict(base, function=function, policy=policy.value, value=value, method=method)
            if cfg.oracle:
                # a vanishing margin makes the VPA oracle comparable to P_V
                row["oracle"] = (oracle_prf(ctx, point, policy, delta=ORACLE_DELTA).value
                                 if cfg.sweep == "rate" else None)
            rows.append(row)
    return rows


def cmd_curves(cfg: ExperimentConfig) -> int:
    rows = curve_rows(cfg)
    columns = list(CURVE_COLUMNS) + (["oracle"] if cfg.oracle else [])
    with _open_out(cfg.out) as fh:
        for line in _header_lines(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in columns])
    return EXIT_OK


# ---------------------------------------------------------------- simulate

BLER_COLUMNS = ("snr_db", "power", "trials", "block_errors", "bler",
                "mean_iterations", "wall_time_seconds", "diverged")


@dataclass(frozen=True)
class BlerRecord:
    snr_db: float
    power: float
    trials: int
    block_errors: int
    mean_iterations: float
    wall_time_seconds: float
    diverged: int = 0

    def __post_init__(self):
        if not 0 <= self.block_errors <= self.trials:
            raise ValueError("block_errors must lie in [0, trials]")

    @property
    def bler(self) -> float:
        return self.block_errors / self.trials

    def row(self) -> list[str]:
        return [_fmt(self.snr_db), _fmt(self.power), str(self.trials), str(self.block_errors),
                _fmt(self.bler), _fmt(self.mean_iterations), _fmt(self.wall_time_seconds),
                str(self.diverged)]


def trial_seeds(master: int, trial: int) -> tuple[int, int, int]:
    """Operator, message and noise seeds for one trial.

    Derived from ``(master, trial)`` alone, so a trial's outcome does not
    depend on which worker ran it or in which order.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=(int(trial),))
    op_seed, msg_seed, noise_seed = (int(s) for s in ss.generate_state(3, dtype=np.uint64))
    return op_seed, msg_seed, noise_seed


@dataclass(frozen=True)
class TrialResult:
    trial: int
    block_error: int
    iterations: int
    diverged: bool
    # block error of the hard decision after each AMP iteration
    per_iteration: tuple[int, ...] = ()


def run_trial(base: BaseMatrix, dims: SparcDims, sigma2: float, design: str, master: int,
              trial: int, amp_iter: int, psi_mode: str = "online") -> TrialResult:
    op_seed, msg_seed, noise_seed = trial_seeds(master, trial)
    op = make_operator(design, base, dims, op_seed)
    msg = sample_message(dims, msg_seed)
    y = awgn(encode(op, msg), sigma2, noise_seed)
    try:
        res = amp_decode(op, y, base, dims, sigma2, max_iter=amp_iter, psi_mode=psi_mode)
    except NumericalDivergence:
        return TrialResult(trial, 1, amp_iter, True, (1,) * amp_iter)
    curve = [int(np.any(d != msg.indices)) for d in res.decisions]
    curve += [curve[-1]] * (amp_iter - len(curve))
    final = int(np.any(hard_decision(res.beta_hat, dims.m) != msg.indices))
    return TrialResult(trial, final, res.iterations, False, tuple(curve))


def _run_chunk(args):
    base_entries, ctx, dims, sigma2, design, master, trials, amp_iter, psi_mode = args
    base = BaseMatrix(ctx, base_entries)
    return [run_trial(base, dims, sigma2, design, master, t, amp_iter, psi_mode) for t in trials]


def run_trials(base: BaseMatrix, dims: SparcDims, sigma2: float, design: str, master: int,
               trials: int, amp_iter: int, workers: int = 1,
               psi_mode: str = "online") -> list[TrialResult]:
    """All trials for one allocation, returned in trial order."""
    ids = list(range(trials))
    if workers == 1:
        results = _run_chunk((base.entries, base.ctx, dims, sigma2, design, master, ids,
                              amp_iter, psi_mode))
    else:
        chunks = [ids[i::workers] for i in range(workers)]
        jobs = [(base.entries, base.ctx, dims, sigma2, design, master, c, amp_iter, psi_mode)
                for c in chunks if c]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for chunk in pool.map(_run_chunk, jobs) for r in chunk]
    return sorted(results, key=lambda r: r.trial)


def aggregate(snr_db: float, power: float, results: list[TrialResult],
              wall_time: float) -> BlerRecord:
    ok = [r.iterations for r in results if not r.diverged]
    return BlerRecord(
        snr_db=snr_db,
        power=power,
        trials=len(results),
        block_errors=sum(r.block_error for r in results),
        mean_iterations=float(np.mean(ok)) if ok else math.nan,
        wall_time_seconds=wall_time,
        diverged=sum(r.diverged for r in results),
    )


def simulate(cfg: ExperimentConfig):
    """Run every SNR point; returns ``(records, per_iteration_rows)``."""
    if cfg.allocation == "profile" and cfg.omega is None:
        prof = load_profile(cfg.profile, cfg.sigma2)
        cfg.omega, cfg.lam = prof.ctx.omega, prof.ctx.lam
    try:
        dims = SparcDims(cfg.m, cfg.l, cfg.m_r, cfg.omega + cfg.lam - 1, cfg.lam)
    except ValueError as exc:
        raise ConfigError(f"dimensions: {exc}") from exc
    if cfg.rate is not None and not math.isclose(cfg.rate_nats, dims.rate, rel_tol=1e-9):
        raise ConfigError(f"field 'rate' ({cfg.rate_nats} nats) disagrees with L ln M / n = {dims.rate}")
    records, curves = [], []
    for snr in cfg.snr_db:
        power = snr_to_power(snr, cfg.sigma2)
        base = build_allocation(cfg, power, dims.rate, snr_db=snr)
        start = time.perf_counter()
        results = run_trials(base, dims, cfg.sigma2, cfg.design, cfg.seed, cfg.trials,
                             cfg.amp_iter, cfg.workers, cfg.psi_mode)
        elapsed = time.perf_counter() - start if cfg.timing else math.nan
        records.append(aggregate(snr, power, results, elapsed))
        if cfg.per_iteration:
            errors = np.sum([r.per_iteration for r in results], axis=0)
            for t, e in enumerate(errors, start=1):
                curves.append((snr, t, int(e), int(e) / len(results)))
    return records, curves


def write_bler_csv(cfg: ExperimentConfig, records: list[BlerRecord], fh) -> None:
    for line in _header_lines(cfg):
        fh.write(line + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(BLER_COLUMNS)
    for rec in records:
        writer.writerow(rec.row())


def write_iteration_csv(cfg: ExperimentConfig, rows, fh) -> None:
    for line in _header_lines(cfg):
        fh.write(line + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("snr_db", "iteration", "block_errors", "bler"))
    for snr, t, e, bler in rows:
        writer.writerow((_fmt(snr), t, e, _fmt(bler)))


def iteration_path(out: str) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + "_iterations" + (p.suffix or ".csv")))


def cmd_simulate(cfg: ExperimentConfig) -> int:
    try:
        records, curves = simulate(cfg)
    except AllocationFailure as exc:
        print(f"allocation failed: {exc}", file=sys.stderr)
        return exc.code
    with _open_out(cfg.out) as fh:
        write_bler_csv(cfg, records, fh)
    if cfg.per_iteration:
        if cfg.out is None or cfg.out == "-":
            buf = io.StringIO()
            write_iteration_csv(cfg, curves, buf)
            sys.stdout.write(buf.getvalue())
        else:
            with open(iteration_path(cfg.out), "w", newline="") as fh:
                write_iteration_csv(cfg, curves, fh)
    return EXIT_OK


COMMANDS = {"se": cmd_se, "vpa": cmd_vpa, "curves": cmd_curves, "simulate": cmd_simulate}


def run(cfg: ExperimentConfig) -> int:
    return COMMANDS[cfg.command](cfg)
