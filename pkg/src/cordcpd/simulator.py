"""Particle-spring benchmark generator.

N particles move in a box, some pairs coupled by springs with force
F_ij = -k (r_i - r_j). Each generated series carries exactly one injected
change-point: a location jolt, a speed jolt, or a rewiring of the spring
connections. Integration is velocity Verlet on a fine grid with elastic
wall reflection; one frame is recorded every ``sample_every`` fine steps.

Time steps are 1-based in all recorded artifacts: frame 1 is the initial
state, and a change at recorded step c means the frame at c is already
post-change (the perturbation lands on the fine-grid point of frame c; a
connection change governs the transition out of frame c).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .rng import Rng

FEATURES = ("l_x", "l_y", "v_x", "v_y")
CHANGE_TYPES = ("location", "speed", "connection")

_RESAMPLE_BUDGET = 1000


@dataclass
class SimConfig:
    n_particles: int = 5
    t_steps: int = 100
    box_half_width: float = 5.0
    spring_constant: float = 0.1
    fine_dt: float = 0.001
    sample_every: int = 100
    connection_prob: float = 0.5
    change_window: tuple[int, int] = (25, 75)
    loc_noise_sigma: float = 0.1
    speed_noise_sigma: float = 0.02
    min_connection_flips: int = 5
    init_pos_sigma: float = 0.5
    init_speed: float = 0.5

    def __post_init__(self):
        lo, hi = self.change_window
        if not (2 <= lo <= hi <= self.t_steps - 1):
            raise ValueError(f"change_window {self.change_window} outside [2, {self.t_steps - 1}]")
        if self.fine_dt <= 0:
            raise ValueError("fine_dt must be positive")
        if min(self.loc_noise_sigma, self.speed_noise_sigma) < 0:
            raise ValueError("noise sigmas must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["change_window"] = list(self.change_window)
        return d


@dataclass
class TrajectorySeries:
    """One generated series plus its ground truth."""

    values: np.ndarray            # [T, N, 4] float64: l_x, l_y, v_x, v_y
    change_step: int              # 1-based recorded step
    change_type: str
    connections_before: np.ndarray  # [N, N] binary symmetric, zero diagonal
    connections_after: np.ndarray
    seed: int                     # substream id the series was drawn from

    def ground_truth_matrices(self) -> np.ndarray:
        """Per-step connection matrices [T, N, N]: before the change step the
        old wiring, from the change step on the new one."""
        t_steps = self.values.shape[0]
        out = np.empty((t_steps, *self.connections_before.shape))
        out[: self.change_step - 1] = self.connections_before
        out[self.change_step - 1:] = self.connections_after
        return out


def pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/col indices of the n(n-1)/2 unordered off-diagonal pairs."""
    return np.triu_indices(n, k=1)


def sample_connections(rng: Rng, cfg: SimConfig) -> np.ndarray:
    """Each unordered pair connected independently with connection_prob."""
    n = cfg.n_particles
    iu, ju = pair_indices(n)
    edges = rng.uniform(size=iu.size) < cfg.connection_prob
    conn = np.zeros((n, n))
    conn[iu, ju] = edges
    conn[ju, iu] = edges
    return conn


def connection_hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Number of unordered pairs whose connectivity differs."""
    iu, ju = pair_indices(a.shape[0])
    return int(np.sum(a[iu, ju] != b[iu, ju]))


def _spring_forces(pos: np.ndarray, conn: np.ndarray, k: float) -> np.ndarray:
    # pos [S, N, 2], conn [S, N, N] -> [S, N, 2]
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    return -k * np.sum(conn[..., None] * diff, axis=2)


def _reflect_walls(pos: np.ndarray, vel: np.ndarray, half_width: float) -> None:
    # Elastic mirror applied in place; loop guards pathological overshoot.
    for _ in range(16):
        over = pos > half_width
        under = pos < -half_width
        if not (over.any() or under.any()):
            return
        pos[over] = 2.0 * half_width - pos[over]
        pos[under] = -2.0 * half_width - pos[under]
        vel[over] *= -1.0
        vel[under] *= -1.0
    raise FloatingPointError("particle escaped the box (unstable configuration)")


def simulate_segment(pos: np.ndarray, vel: np.ndarray, conn: np.ndarray,
                     n_recorded: int, cfg: SimConfig,
                     fine_dt: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance ``n_recorded`` recorded steps and return (frames, pos, vel).

    Inputs carry a leading batch axis: pos/vel [S, N, 2], conn [S, N, N].
    ``frames`` is [S, n_recorded, N, 4]. ``fine_dt`` overrides the config
    grid (used by the finer-step reference runs in tests).
    """
    dt = cfg.fine_dt if fine_dt is None else fine_dt
    substeps = int(round(cfg.sample_every * cfg.fine_dt / dt))
    pos = pos.copy()
    vel = vel.copy()
    s, n = pos.shape[0], pos.shape[1]
    frames = np.empty((s, n_recorded, n, 4))
    k = cfg.spring_constant
    force = _spring_forces(pos, conn, k)
    for rec in range(n_recorded):
        for _ in range(substeps):
            v_half = vel + (0.5 * dt) * force
            pos += dt * v_half
            _reflect_walls(pos, v_half, cfg.box_half_width)
            force = _spring_forces(pos, conn, k)
            vel = v_half + (0.5 * dt) * force
        frames[:, rec, :, :2] = pos
        frames[:, rec, :, 2:] = vel
    if not np.isfinite(frames).all():
        raise FloatingPointError("non-finite trajectory state")
    return frames, pos, vel


def initial_state(rng: Rng, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Positions ~ N(0, init_pos_sigma^2) clipped to the box; velocities with
    a random direction and fixed speed."""
    n = cfg.n_particles
    pos = rng.normal(scale=cfg.init_pos_sigma, size=(n, 2))
    np.clip(pos, -cfg.box_half_width, cfg.box_half_width, out=pos)
    direction = rng.normal(size=(n, 2))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    vel = cfg.init_speed * direction
    return pos, vel


def inject_change(pos: np.ndarray, vel: np.ndarray, conn: np.ndarray,
                  change_type: str, rng: Rng, cfg: SimConfig
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply one change of the given type; returns (pos, vel, connections).

    Location/speed add i.i.d. Gaussian jolts to every particle. Connection
    redraws the wiring until at least ``min_connection_flips`` of the
    unordered pairs differ.
    """
    if change_type not in CHANGE_TYPES:
        raise ValueError(f"unknown change type {change_type!r}")
    if change_type == "location":
        pos = pos + rng.normal(scale=cfg.loc_noise_sigma, size=pos.shape)
        np.clip(pos, -cfg.box_half_width, cfg.box_half_width, out=pos)
    elif change_type == "speed":
        vel = vel + rng.normal(scale=cfg.speed_noise_sigma, size=vel.shape)
    else:
        for _ in range(_RESAMPLE_BUDGET):
            candidate = sample_connections(rng, cfg)
            if connection_hamming(candidate, conn) >= cfg.min_connection_flips:
                return pos, vel, candidate
        raise RuntimeError(
            f"no connection resample with >= {cfg.min_connection_flips} flips "
            f"after {_RESAMPLE_BUDGET} draws")
    return pos, vel, conn


def _draw_change_step(rng: Rng, cfg: SimConfig) -> int:
    lo, hi = cfg.change_window
    return int(rng.integers(lo, hi))


def generate_series(change_type: str, rng: Rng, cfg: SimConfig | None = None) -> TrajectorySeries:
    """Simulate one series with a single injected change-point.

    ``rng`` must be the series' own substream; all draws (initial state,
    wiring, change step, jolt) come from purpose substreams of it.
    """
    cfg = cfg or SimConfig()
    change_step = _draw_change_step(rng.substream("change-step"), cfg)
    conn_before = sample_connections(rng.substream("connections"), cfg)
    pos, vel = initial_state(rng.substream("init"), cfg)

    pos_b, vel_b = pos[None], vel[None]
    frames = np.empty((cfg.t_steps, cfg.n_particles, 4))
    frames[0, :, :2] = pos_b[0]
    frames[0, :, 2:] = vel_b[0]

    pre, pos_b, vel_b = simulate_segment(
        pos_b, vel_b, conn_before[None], change_step - 1, cfg)
    frames[1:change_step] = pre[0]

    new_pos, new_vel, conn_after = inject_change(
        pos_b[0], vel_b[0], conn_before, change_type, rng.substream("change"), cfg)
    pos_b, vel_b = new_pos[None], new_vel[None]
    frames[change_step - 1, :, :2] = pos_b[0]
    frames[change_step - 1, :, 2:] = vel_b[0]

    post, _, _ = simulate_segment(
        pos_b, vel_b, conn_after[None], cfg.t_steps - change_step, cfg)
    frames[change_step:] = post[0]

    return TrajectorySeries(
        values=frames,
        change_step=change_step,
        change_type=change_type,
        connections_before=conn_before,
        connections_after=conn_after,
        seed=rng.stream,
    )


def generate_series_batch(change_type: str, rngs: list[Rng],
                          cfg: SimConfig | None = None) -> list[TrajectorySeries]:
    """Generate many series of one change type in a single vectorized sweep.

    Per-series randomness comes from each series' own substream, so the
    result is identical to calling :func:`generate_series` once per rng;
    only the integration is batched.
    """
    cfg = cfg or SimConfig()
    count = len(rngs)
    if count == 0:
        return []
    n = cfg.n_particles
    change_steps = np.array([_draw_change_step(r.substream("change-step"), cfg) for r in rngs])
    conns = np.stack([sample_connections(r.substream("connections"), cfg) for r in rngs])
    conn_before = conns.copy()
    pos = np.empty((count, n, 2))
    vel = np.empty((count, n, 2))
    for s, r in enumerate(rngs):
        pos[s], vel[s] = initial_state(r.substream("init"), cfg)

    frames = np.empty((count, cfg.t_steps, n, 4))
    frames[:, 0, :, :2] = pos
    frames[:, 0, :, 2:] = vel
    conn_after = conn_before.copy()

    for step in range(2, cfg.t_steps + 1):
        rec, pos, vel = simulate_segment(pos, vel, conns, 1, cfg)
        frames[:, step - 1] = rec[:, 0]
        due = np.nonzero(change_steps == step)[0]
        for s in due:
            new_pos, new_vel, new_conn = inject_change(
                pos[s], vel[s], conns[s], change_type,
                rngs[s].substream("change"), cfg)
            pos[s], vel[s] = new_pos, new_vel
            conns[s] = new_conn
            conn_after[s] = new_conn
            frames[s, step - 1, :, :2] = new_pos
            frames[s, step - 1, :, 2:] = new_vel

    return [
        TrajectorySeries(
            values=frames[s],
            change_step=int(change_steps[s]),
            change_type=change_type,
            connections_before=conn_before[s],
            connections_after=conn_after[s],
            seed=rngs[s].stream,
        )
        for s in range(count)
    ]


def generate_dataset(counts: dict[str, dict[str, int]], master_seed: int,
                     cfg: SimConfig | None = None, out_dir=None,
                     normalize: bool = True):
    """Generate a full dataset tree: tensor files, ground-truth connection
    files, and a manifest, normalized on the training split.

    ``counts`` maps split -> {change_type: n}; missing entries mean zero.
    Every series draws from its own substream keyed by (split, type, index),
    so the same master seed always yields byte-identical files regardless
    of generation order or batching.
    """
    from pathlib import Path

    from . import dataio

    cfg = cfg or SimConfig()
    if out_dir is None:
        raise ValueError("generate_dataset needs an output directory")
    out_dir = Path(out_dir)
    total = sum(int(n) for per_type in counts.values() for n in per_type.values())
    if total < 1:
        raise ValueError("counts must request at least one series")
    for split in counts:
        if split not in dataio.SPLITS:
            raise ValueError(f"unknown split {split!r}")
        for ct in counts[split]:
            if ct not in CHANGE_TYPES:
                raise ValueError(f"unknown change type {ct!r}")

    master = Rng(master_seed)
    records = []
    for split in dataio.SPLITS:
        per_type = counts.get(split, {})
        for change_type in CHANGE_TYPES:
            n = int(per_type.get(change_type, 0))
            if n == 0:
                continue
            rngs = [master.substream("series", split, change_type, i) for i in range(n)]
            for i, series in enumerate(generate_series_batch(change_type, rngs, cfg)):
                series_id = f"{split}-{change_type}-{i:04d}"
                rel = f"tensors/{series_id}.cpdt"
                rel_conn = f"connections/{series_id}.cpdt"
                dataio.write_tensor(out_dir / rel, series.values)
                conn_stack = np.stack([series.connections_before, series.connections_after])
                dataio.write_tensor(out_dir / rel_conn, conn_stack)
                records.append(dataio.SeriesRecord(
                    series_id=series_id,
                    split=split,
                    change_step=series.change_step,
                    change_type=change_type,
                    path=rel,
                    connections_path=rel_conn,
                ))

    manifest = dataio.DatasetManifest(
        kind="synthetic",
        seed=int(master_seed),
        t_steps=cfg.t_steps,
        n_vars=cfg.n_particles,
        n_feats=len(FEATURES),
        feature_names=list(FEATURES),
        config=cfg.to_dict(),
        series=records,
    )
    path = dataio.save_manifest(manifest, out_dir)
    manifest.root = path.parent
    if normalize:
        fixed = {"l_x": cfg.box_half_width, "l_y": cfg.box_half_width}
        dataio.normalize_dataset(manifest, fixed)
    return manifest


def kinetic_energy(frame: np.ndarray) -> float:
    """0.5 * sum |v|^2 over particles of one [N, 4] frame (unit masses)."""
    return 0.5 * float(np.sum(frame[:, 2:] ** 2))


def spring_potential(frame: np.ndarray, conn: np.ndarray, k: float) -> float:
    """0.5 * k * sum_(connected pairs) |r_i - r_j|^2 of one [N, 4] frame."""
    iu, ju = pair_indices(conn.shape[0])
    d = frame[iu, :2] - frame[ju, :2]
    return 0.5 * k * float(np.sum(conn[iu, ju] * np.sum(d * d, axis=-1)))
