"""Surrogate safety measures and behavioural attributes from trial records.

Everything here is a pure function of a TrialRecord, so metrics computed
live during a trial and metrics computed from the serialized log agree
exactly. Undefined measures (no conflict course, crossing never completed)
stay None and are excluded from means rather than imputed.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, asdict
from typing import Iterable, Optional, Sequence

from .traffic import PED_RADIUS, TICK_RATE, VEHICLE_LENGTH, VEHICLE_WIDTH, RoadGeometry
from .trial import Condition, OutcomeStatus, TrialRecord

DANGER_THRESHOLD = 1.5  # s; PET or TTC below this marks a dangerous conflict


@dataclass(frozen=True)
class CrossingVariables:
    wait_time: float
    crossing_duration: Optional[float]
    crossing_speed: Optional[float]
    initial_walking_speed: Optional[float]


@dataclass(frozen=True)
class DistractionAttributes:
    pct_phone_wait: Optional[float]
    pct_phone_cross: Optional[float]
    head_orientations_per_s: float
    head_turned_any: bool


@dataclass(frozen=True)
class ConflictMetrics:
    min_ttc: Optional[float]
    min_pet: Optional[float]
    max_accel: float
    max_decel: float
    dangerous: bool


def _earliest_overlap(
    px: float,
    py: float,
    u: float,
    front: float,
    vv: float,
    length: float,
    band_lo: float,
    band_hi: float,
    r: float,
) -> Optional[float]:
    """Earliest tau >= 0 at which the moving disc and rectangle overlap.

    Both bodies move at constant velocity, the disc along the crossing axis
    and the rectangle along the travel axis, so the centre-to-rectangle
    distance components are piecewise linear in tau and each piece reduces to
    a quadratic inequality. Tangency counts as the boundary instant.
    """
    rear = front - length
    bps = {0.0}
    if vv != 0.0:
        for val in ((px - rear) / vv, (px - front) / vv):
            if val > 0.0:
                bps.add(val)
    if u != 0.0:
        for val in ((band_lo - py) / u, (band_hi - py) / u):
            if val > 0.0:
                bps.add(val)
    pts = sorted(bps)
    pts.append(math.inf)

    for a, b in zip(pts[:-1], pts[1:]):
        probe = a + (min(1.0, (b - a) / 2.0) if math.isfinite(b) else 1.0)
        # at most one arm of each distance component is positive at a time
        gap_right = (rear + vv * probe) - px
        gap_left = px - (front + vv * probe)
        if gap_right > 0.0:
            s1, i1 = vv, rear - px
        elif gap_left > 0.0:
            s1, i1 = -vv, px - front
        else:
            s1, i1 = 0.0, 0.0
        centre = py + u * probe
        if band_lo - centre > 0.0:
            s2, i2 = -u, band_lo - py
        elif centre - band_hi > 0.0:
            s2, i2 = u, py - band_hi
        else:
            s2, i2 = 0.0, 0.0

        qa = s1 * s1 + s2 * s2
        qb = 2.0 * (s1 * i1 + s2 * i2)
        qc = i1 * i1 + i2 * i2 - r * r
        if qa == 0.0:
            if qb == 0.0:
                if qc < 0.0:
                    return a
                continue
            root = -qc / qb
            if qb < 0.0:
                start = max(a, root)
                if start < b:
                    return start if start > a else a
            else:
                if qc < 0.0 and a < root:
                    return a
            continue
        disc = qb * qb - 4.0 * qa * qc
        if disc <= 0.0:
            continue
        sq = math.sqrt(disc)
        r1 = (-qb - sq) / (2.0 * qa)
        r2 = (-qb + sq) / (2.0 * qa)
        if r2 <= a or r1 >= b:
            continue
        return max(a, r1)
    return None


def compute_ttc_series(record: TrialRecord, geometry: Optional[RoadGeometry] = None):
    """Per-second minimum time-to-collision under frozen velocities.

    Sampled at 1 Hz on the tick grid; seconds with no projected collision
    course are omitted.
    """
    if not record.ticks:
        raise ValueError("record has no ticks")
    geometry = geometry or record.geometry
    px = geometry.ped_path_x
    band_lo = geometry.lane_center_y - VEHICLE_WIDTH / 2.0
    band_hi = geometry.lane_center_y + VEHICLE_WIDTH / 2.0
    step = round(TICK_RATE)
    series: list[tuple[float, float]] = []
    for k in range(0, len(record.ticks), step):
        tick = record.ticks[k]
        best: Optional[float] = None
        for veh in tick.vehicles:
            ttc = _earliest_overlap(
                px, tick.ped.y, tick.ped.v, veh.x, veh.v,
                VEHICLE_LENGTH, band_lo, band_hi, PED_RADIUS,
            )
            if ttc is not None and (best is None or ttc < best):
                best = ttc
        if best is not None:
            series.append((tick.t, best))
    return series


def _ped_zone_interval(record: TrialRecord, geometry: RoadGeometry):
    y_lo = geometry.zone_y_min - PED_RADIUS
    y_hi = geometry.zone_y_max + PED_RADIUS
    entry: Optional[float] = None
    for tick in record.ticks:
        inside = y_lo < tick.ped.y < y_hi
        if entry is None:
            if inside:
                entry = tick.t
        elif not inside:
            return entry, tick.t
    return entry, None


def _vehicle_zone_intervals(record: TrialRecord, geometry: RoadGeometry):
    x_lo = geometry.zone_x_min
    x_hi = geometry.zone_x_max
    entries: dict[int, float] = {}
    exits: dict[int, float] = {}
    for tick in record.ticks:
        for veh in tick.vehicles:
            inside = veh.x > x_lo and veh.x - VEHICLE_LENGTH < x_hi
            if inside:
                if veh.id not in entries:
                    entries[veh.id] = tick.t
            elif veh.id in entries and veh.id not in exits:
                exits[veh.id] = tick.t
    return {vid: (entries[vid], exits.get(vid)) for vid in entries}


def compute_pet(record: TrialRecord, geometry: Optional[RoadGeometry] = None) -> Optional[float]:
    """Minimum post-encroachment time against every zone-traversing vehicle.

    Symmetric over passing order; overlapping occupancy intervals score 0.
    Undefined when the pedestrian never entered the conflict zone.
    """
    if not record.ticks:
        raise ValueError("record has no ticks")
    geometry = geometry or record.geometry
    p_entry, p_exit = _ped_zone_interval(record, geometry)
    if p_entry is None:
        return None
    best: Optional[float] = None
    for v_entry, v_exit in _vehicle_zone_intervals(record, geometry).values():
        if p_exit is not None and v_entry >= p_exit:
            pet = v_entry - p_exit
        elif v_exit is not None and v_exit <= p_entry:
            pet = p_entry - v_exit
        else:
            pet = 0.0
        if best is None or pet < best:
            best = pet
    return best


def _accel_series(record: TrialRecord) -> list[float]:
    speeds = [t.ped.v for t in record.ticks]
    dt = record.config.tick_dt
    return [
        (speeds[k + 1] - speeds[k - 1]) / (2.0 * dt) for k in range(1, len(speeds) - 1)
    ]


def compute_kinematics(record: TrialRecord):
    """(max_accel, max_decel, CrossingVariables) from central differences."""
    if len(record.ticks) < 2:
        raise ValueError("record needs at least two ticks")
    acc = _accel_series(record)
    max_accel = max(max(acc, default=0.0), 0.0)
    max_decel = max(-min(acc, default=0.0), 0.0)

    wait_time = record.wait_end_t if record.wait_end_t is not None else record.params.timeout
    duration = None
    speed = None
    initial = None
    if record.wait_end_tick is not None:
        window = record.ticks[record.wait_end_tick : record.wait_end_tick + round(TICK_RATE) + 1]
        initial = max(t.ped.v for t in window)
        if record.cross_end_tick is not None:
            duration = (record.cross_end_tick - record.wait_end_tick) / TICK_RATE
            speed = record.geometry.crossing_length / duration
    return max_accel, max_decel, CrossingVariables(
        wait_time=wait_time,
        crossing_duration=duration,
        crossing_speed=speed,
        initial_walking_speed=initial,
    )


def average_rates(record: TrialRecord) -> tuple[float, float]:
    """Mean positive acceleration and mean deceleration magnitude."""
    acc = _accel_series(record)
    pos = [a for a in acc if a > 0.0]
    neg = [-a for a in acc if a < 0.0]
    avg_a = sum(pos) / len(pos) if pos else 0.0
    avg_d = sum(neg) / len(neg) if neg else 0.0
    return avg_a, avg_d


def _analysis_end_tick(record: TrialRecord) -> int:
    """Last tick of the trial proper, excluding the post-success grace tail."""
    if record.cross_end_tick is not None:
        return record.cross_end_tick
    return len(record.ticks) - 1


def compute_distraction(record: TrialRecord) -> DistractionAttributes:
    end = _analysis_end_tick(record)
    ticks = record.ticks
    wait_end = record.wait_end_tick if record.wait_end_tick is not None else end + 1

    wait_span = [t for t in ticks[:wait_end]]
    cross_span = [t for t in ticks[wait_end : end + 1]]
    pct_wait = None
    if wait_span:
        pct_wait = 100.0 * sum(1 for t in wait_span if t.ped.head == "phone") / len(wait_span)
    pct_cross = None
    if cross_span:
        pct_cross = 100.0 * sum(1 for t in cross_span if t.ped.head == "phone") / len(cross_span)

    to_phone = 0
    turned = False
    for prev, cur in zip(ticks[:end], ticks[1 : end + 1]):
        if prev.ped.head != cur.ped.head:
            turned = True
            if cur.ped.head == "phone":
                to_phone += 1
    duration = ticks[end].t
    rate = to_phone / duration if duration > 0 else 0.0
    return DistractionAttributes(
        pct_phone_wait=pct_wait,
        pct_phone_cross=pct_cross,
        head_orientations_per_s=rate,
        head_turned_any=turned,
    )


def conflict_metrics(
    record: TrialRecord,
    geometry: Optional[RoadGeometry] = None,
    threshold: float = DANGER_THRESHOLD,
) -> ConflictMetrics:
    geometry = geometry or record.geometry
    series = compute_ttc_series(record, geometry)
    min_ttc = min((v for _, v in series), default=None)
    min_pet = compute_pet(record, geometry)
    max_a, max_d, _ = compute_kinematics(record)
    dangerous = (min_ttc is not None and min_ttc < threshold) or (
        min_pet is not None and min_pet < threshold
    )
    return ConflictMetrics(
        min_ttc=min_ttc,
        min_pet=min_pet,
        max_accel=max_a,
        max_decel=max_d,
        dangerous=dangerous,
    )


@dataclass(frozen=True)
class TrialMetrics:
    """One analysis row per trial: every variable family, plus tags."""

    trial_id: str
    condition: Condition
    outcome: str
    female: Optional[bool]
    age_band: Optional[str]
    participant_id: Optional[str]
    wait_time: float
    crossing_duration: Optional[float]
    crossing_speed: Optional[float]
    initial_walking_speed: Optional[float]
    max_accel: float
    max_decel: float
    avg_accel: float
    avg_decel: float
    pct_phone_wait: Optional[float]
    pct_phone_cross: Optional[float]
    head_orientations_per_s: float
    head_turned_any: bool
    min_ttc: Optional[float]
    min_pet: Optional[float]
    dangerous: bool


def compute_trial_metrics(
    record: TrialRecord,
    threshold: float = DANGER_THRESHOLD,
    participant_id: Optional[str] = None,
) -> TrialMetrics:
    conflict = conflict_metrics(record, threshold=threshold)
    _, _, crossing = compute_kinematics(record)
    distraction = compute_distraction(record)
    avg_a, avg_d = average_rates(record)
    meta = record.participant
    return TrialMetrics(
        trial_id=record.trial_id,
        condition=record.condition,
        outcome=record.outcome.status.value,
        female=None if meta is None else meta.female,
        age_band=None if meta is None else meta.age_band,
        participant_id=participant_id,
        wait_time=crossing.wait_time,
        crossing_duration=crossing.crossing_duration,
        crossing_speed=crossing.crossing_speed,
        initial_walking_speed=crossing.initial_walking_speed,
        max_accel=conflict.max_accel,
        max_decel=conflict.max_decel,
        avg_accel=avg_a,
        avg_decel=avg_d,
        pct_phone_wait=distraction.pct_phone_wait,
        pct_phone_cross=distraction.pct_phone_cross,
        head_orientations_per_s=distraction.head_orientations_per_s,
        head_turned_any=distraction.head_turned_any,
        min_ttc=conflict.min_ttc,
        min_pet=conflict.min_pet,
        dangerous=conflict.dangerous,
    )


# ---------------------------------------------------------------------------
# Grouped summaries and sensitivity bins
# ---------------------------------------------------------------------------

SUMMARY_VARIABLES = (
    ("wait_time_s", "wait_time"),
    ("crossing_duration_s", "crossing_duration"),
    ("crossing_speed_mps", "crossing_speed"),
    ("initial_walking_speed_mps", "initial_walking_speed"),
    ("pct_phone_wait", "pct_phone_wait"),
    ("pct_phone_cross", "pct_phone_cross"),
    ("head_orientations_per_s", "head_orientations_per_s"),
    ("max_accel_mps2", "max_accel"),
    ("max_decel_mps2", "max_decel"),
    ("avg_accel_mps2", "avg_accel"),
    ("avg_decel_mps2", "avg_decel"),
)


@dataclass(frozen=True)
class GroupSummary:
    condition: Condition
    scope: str  # "general" | "female" | "male"
    n: int
    means: dict
    min_pet: Optional[float]
    outcome_shares: dict  # percent, sums to 100


@dataclass
class SummaryTable:
    groups: list
    warnings: list

    def to_rows(self) -> list[dict]:
        rows = []
        for g in self.groups:
            for label, _attr in SUMMARY_VARIABLES:
                rows.append(
                    {
                        "variable": label,
                        "condition": g.condition.value,
                        "group": g.scope,
                        "value": g.means.get(label),
                        "n": g.n,
                    }
                )
            rows.append(
                {
                    "variable": "min_pet_s",
                    "condition": g.condition.value,
                    "group": g.scope,
                    "value": g.min_pet,
                    "n": g.n,
                }
            )
            for status in ("success", "timeout", "failed"):
                rows.append(
                    {
                        "variable": f"{status}_pct",
                        "condition": g.condition.value,
                        "group": g.scope,
                        "value": g.outcome_shares[status],
                        "n": g.n,
                    }
                )
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["variable", "condition", "group", "value", "n"])
        writer.writeheader()
        for row in self.to_rows():
            value = row["value"]
            row = dict(row)
            row["value"] = "" if value is None else repr(float(value))
            writer.writerow(row)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.to_rows(), sort_keys=True, indent=2)

    def lookup(self, variable: str, condition: Condition, scope: str = "general"):
        for g in self.groups:
            if g.condition is condition and g.scope == scope:
                if variable == "min_pet_s":
                    return g.min_pet
                if variable.endswith("_pct") and variable[:-4] in g.outcome_shares:
                    return g.outcome_shares[variable[:-4]]
                return g.means.get(variable)
        return None

    def to_text(self) -> str:
        lines = []
        conditions = []
        for g in self.groups:
            if g.condition not in conditions:
                conditions.append(g.condition)
        scopes = ("general", "female", "male")
        header = f"{'variable':34s} {'condition':16s}" + "".join(f"{s:>10s}" for s in scopes)
        lines.append(header)
        lines.append("-" * len(header))
        by_key = {(g.condition, g.scope): g for g in self.groups}
        for label, _ in SUMMARY_VARIABLES + (("min_pet_s", None), ("success_pct", None),
                                             ("timeout_pct", None), ("failed_pct", None)):
            for cond in conditions:
                cells = []
                for scope in scopes:
                    g = by_key.get((cond, scope))
                    if g is None:
                        cells.append(f"{'-':>10s}")
                        continue
                    if label == "min_pet_s":
                        v = g.min_pet
                    elif label.endswith("_pct") and label[:-4] in g.outcome_shares:
                        v = g.outcome_shares[label[:-4]]
                    else:
                        v = g.means.get(label)
                    cells.append(f"{v:10.2f}" if v is not None else f"{'-':>10s}")
                lines.append(f"{label:34s} {cond.value:16s}" + "".join(cells))
        return "\n".join(lines)


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def _group_summary(metrics: Sequence[TrialMetrics], condition: Condition, scope: str) -> GroupSummary:
    n = len(metrics)
    means = {}
    for label, attr in SUMMARY_VARIABLES:
        means[label] = _mean(getattr(m, attr) for m in metrics)
    pets = [m.min_pet for m in metrics if m.min_pet is not None]
    outcomes = {s: 0 for s in ("success", "timeout", "failed")}
    for m in metrics:
        outcomes[m.outcome] += 1
    shares = {s: 100.0 * c / n for s, c in outcomes.items()}
    return GroupSummary(
        condition=condition,
        scope=scope,
        n=n,
        means=means,
        min_pet=min(pets) if pets else None,
        outcome_shares=shares,
    )


def summarize(
    metrics: Sequence[TrialMetrics],
    group_keys: Sequence[str] = ("condition", "gender"),
) -> SummaryTable:
    """Grouped means, group-minimum PET and outcome shares per condition.

    With "gender" in group_keys each condition also gets female and male
    scopes. Requested groups with no trials are skipped with a warning.
    """
    groups: list[GroupSummary] = []
    warnings: list[str] = []
    conditions = [c for c in Condition if any(m.condition is c for m in metrics)]
    for cond in Condition:
        if cond not in conditions:
            warnings.append(f"no trials for condition {cond.value}")
    scopes: list[str] = ["general"]
    if "gender" in group_keys:
        scopes += ["female", "male"]
    for cond in conditions:
        rows = [m for m in metrics if m.condition is cond]
        for scope in scopes:
            if scope == "general":
                sub = rows
            else:
                want = scope == "female"
                sub = [m for m in rows if m.female is want]
            if not sub:
                warnings.append(f"empty group {cond.value}/{scope}")
                continue
            groups.append(_group_summary(sub, cond, scope))
    return SummaryTable(groups=groups, warnings=warnings)


SEGMENT_DEFS = ("gender", "age_band", "wait_gt_20", "phone_wait_gt_75")


def _segment_levels(name: str, m: TrialMetrics):
    if name == "gender":
        if m.female is None:
            return None
        return "female" if m.female else "male"
    if name == "age_band":
        return m.age_band
    if name == "wait_gt_20":
        return "wait>20s" if m.wait_time > 20.0 else "wait<=20s"
    if name == "phone_wait_gt_75":
        if m.pct_phone_wait is None:
            return None
        return "phone>75%" if m.pct_phone_wait > 75.0 else "phone<=75%"
    raise ValueError(f"unknown segment {name!r}")


def sensitivity_bins(
    metrics: Sequence[TrialMetrics],
    segment_defs: Sequence[str] = SEGMENT_DEFS,
    threshold: float = DANGER_THRESHOLD,
) -> list[dict]:
    """Share of less severe conflicts (PET above threshold) per segment level.

    Shares are computed over trials with a defined PET; n counts those trials
    and n_total every trial in the cell.
    """
    rows = []
    for seg in segment_defs:
        levels: dict[tuple[str, Condition], list[TrialMetrics]] = {}
        for m in metrics:
            level = _segment_levels(seg, m)
            if level is None:
                continue
            levels.setdefault((level, m.condition), []).append(m)
        for (level, cond), items in sorted(
            levels.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
        ):
            defined = [m for m in items if m.min_pet is not None]
            safe = sum(1 for m in defined if m.min_pet > threshold)
            rows.append(
                {
                    "segment": seg,
                    "level": level,
                    "condition": cond.value,
                    "share_above_threshold": safe / len(defined) if defined else None,
                    "n": len(defined),
                    "n_total": len(items),
                }
            )
    return rows


def sensitivity_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(
        buf,
        fieldnames=["segment", "level", "condition", "share_above_threshold", "n", "n_total"],
    )
    writer.writeheader()
    for row in rows:
        out = dict(row)
        if out["share_above_threshold"] is not None:
            out["share_above_threshold"] = repr(float(out["share_above_threshold"]))
        else:
            out["share_above_threshold"] = ""
        writer.writerow(out)
    return buf.getvalue()


def metrics_csv(metrics: Sequence[TrialMetrics]) -> str:
    """Trial-level covariate table (the design-matrix source)."""
    fields = [f for f in TrialMetrics.__dataclass_fields__]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for m in metrics:
        row = asdict(m)
        row["condition"] = m.condition.value
        for key, val in row.items():
            if isinstance(val, float):
                row[key] = repr(val)
            elif val is None:
                row[key] = ""
        writer.writerow(row)
    return buf.getvalue()
