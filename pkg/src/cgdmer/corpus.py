"""Deterministic synthetic multi-lead signal / report pairs and their NDJSON format."""

from dataclasses import dataclass, field
import json

import numpy as np

FORMAT_VERSION = 1

# Class-agnostic QRS polarity and size per lead (repeats past 12 leads).
_LEAD_PROFILE = np.array([1.0, 1.3, 0.4, -0.9, 0.5, 0.9, -0.4, 0.3, 0.8, 1.4, 1.2, 0.9])


@dataclass
class ClassSpec:
    name: str
    rate_band: tuple  # beats per minute, (low, high)
    jitter: float  # RR coefficient of variation
    templates: tuple
    prompt: str
    lead_modulation: float = 0.1
    lead_scale: np.ndarray = field(default=None, repr=False)

    def scales(self, leads, class_index):
        """Per-lead amplitude: shared profile times a small class-specific ripple."""
        if self.lead_scale is not None:
            s = np.asarray(self.lead_scale, dtype=np.float64)
            if s.shape != (leads,):
                raise ValueError(f"{self.name}: lead_scale has {s.shape[0]} entries, need {leads}")
            return s
        base = np.resize(_LEAD_PROFILE, leads)
        phase = np.arange(leads) * 0.7 + class_index
        return base * (1.0 + self.lead_modulation * np.sin(phase))


DEFAULT_CLASSES = (
    ClassSpec(
        "normal sinus rhythm", (60, 90), 0.02,
        ("normal sinus rhythm at {rate} bpm.",
         "sinus rhythm within normal limits, rate {rate}.",
         "normal ecg. regular sinus rhythm, {rate} bpm."),
        "normal sinus rhythm with a regular rate.",
    ),
    ClassSpec(
        "sinus tachycardia", (120, 180), 0.02,
        ("sinus tachycardia at {rate} bpm.",
         "rapid regular rhythm, sinus tachycardia, rate {rate}.",
         "tachycardia noted. fast sinus rhythm at {rate} bpm."),
        "sinus tachycardia, a fast regular rhythm.",
    ),
    ClassSpec(
        "sinus bradycardia", (35, 50), 0.02,
        ("sinus bradycardia at {rate} bpm.",
         "slow regular rhythm, sinus bradycardia, rate {rate}.",
         "bradycardia noted. slow sinus rhythm at {rate} bpm."),
        "sinus bradycardia, a slow regular rhythm.",
    ),
    ClassSpec(
        "irregular rhythm", (60, 100), 0.18,
        ("irregularly irregular rhythm at {rate} bpm.",
         "irregular rhythm, variable rr intervals, rate {rate}.",
         "rhythm irregular. possible atrial fibrillation, {rate} bpm."),
        "irregular rhythm with variable rr intervals.",
    ),
)


@dataclass
class SignalRecord:
    id: str
    ecg: np.ndarray  # (L, T)
    report: str
    label: int
    class_name: str

    def __eq__(self, other):
        return (
            isinstance(other, SignalRecord)
            and (self.id, self.report, self.label, self.class_name)
            == (other.id, other.report, other.label, other.class_name)
            and self.ecg.shape == other.ecg.shape
            and bool(np.array_equal(self.ecg, other.ecg))
        )


@dataclass(frozen=True)
class Waveform:
    """Bump offsets (s, relative to the R peak), widths (s), and relative heights."""

    p: tuple = (-0.16, 0.035, 0.15)
    qrs: tuple = (0.0, 0.025, 1.0)
    t: tuple = (0.28, 0.06, 0.3)


def _validate_specs(specs, duration):
    if len(specs) < 2:
        raise ValueError("need at least two classes")
    for s in specs:
        lo, hi = s.rate_band
        if not 0 < lo <= hi:
            raise ValueError(f"{s.name}: invalid rate band {s.rate_band}")
        if duration * lo / 60.0 < 2.0:
            raise ValueError(
                f"{s.name}: at {lo} bpm fewer than 2 beats fit in {duration:g} s; lengthen the record"
            )
        if len(s.templates) < 3:
            raise ValueError(f"{s.name}: need at least 3 report templates")


def _beat_times(rng, spec, duration):
    lo, hi = spec.rate_band
    rate = rng.uniform(lo, hi)
    rr_mean = 60.0 / rate
    rr_min, rr_max = 60.0 / hi, 60.0 / lo
    t = rng.uniform(0.0, rr_mean)
    times, rrs = [t], []
    while True:
        rr = float(np.clip(rr_mean * (1.0 + spec.jitter * rng.standard_normal()), rr_min, rr_max))
        t += rr
        if t > duration + 0.5:
            break
        times.append(t)
        rrs.append(rr)
    return np.array(times), np.array(rrs)


def synthesize(rng, spec, class_index, leads, length, sample_rate, wave=Waveform()):
    """One (L, T) record plus its realised mean rate in bpm."""
    duration = length / sample_rate
    beats, rrs = _beat_times(rng, spec, duration)
    t = np.arange(length) / sample_rate
    trace = np.zeros(length)
    for b in beats:
        for off, width, height in (wave.p, wave.qrs, wave.t):
            trace += height * np.exp(-0.5 * ((t - b - off) / width) ** 2)
    scales = spec.scales(leads, class_index)
    ecg = scales[:, None] * trace[None, :]
    ecg += rng.standard_normal((leads, length)) * (0.05 * wave.qrs[2] * np.abs(scales))[:, None]
    ecg -= ecg.mean(axis=1, keepdims=True)
    return ecg, 60.0 / rrs.mean()


def generate(count, seed, specs=DEFAULT_CLASSES, leads=12, length=250, sample_rate=25.0):
    """Deterministic records; record ``i`` depends only on (seed, i)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    _validate_specs(specs, length / sample_rate)
    return [make_record(seed, i, specs, leads, length, sample_rate) for i in range(count)]


def make_record(seed, index, specs=DEFAULT_CLASSES, leads=12, length=250, sample_rate=25.0):
    rng = np.random.default_rng([seed, index])
    label = int(rng.integers(len(specs)))
    spec = specs[label]
    ecg, rate = synthesize(rng, spec, label, leads, length, sample_rate)
    template = spec.templates[int(rng.integers(len(spec.templates)))]
    return SignalRecord(f"s{seed}-{index:06d}", ecg, template.format(rate=int(round(rate))), label, spec.name)


def class_names(specs=DEFAULT_CLASSES):
    return [s.name for s in specs]


# ---------------------------------------------------------------------------
# NDJSON
# ---------------------------------------------------------------------------


def _row(values):
    return "[" + ",".join("%.9g" % v for v in values) + "]"


def write_dataset(records, path, leads=None, length=None, names=None):
    """Metadata line, then one JSON object per record; ECG stored at 32-bit precision."""
    if records:
        leads, length = records[0].ecg.shape
    if leads is None or length is None:
        raise ValueError("write_dataset: L and T are required for an empty dataset")
    names = list(names) if names is not None else class_names()
    meta = {"format_version": FORMAT_VERSION, "L": int(leads), "T": int(length), "class_names": names}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta) + "\n")
        for r in records:
            if r.ecg.shape != (leads, length):
                raise ValueError(f"record {r.id}: ecg shape {r.ecg.shape} does not match ({leads}, {length})")
            ecg = np.asarray(r.ecg, dtype=np.float32)
            head = json.dumps({"id": r.id, "report": r.report, "label": int(r.label), "class_name": r.class_name})
            fh.write(head[:-1] + ', "ecg": [' + ",".join(_row(row) for row in ecg) + "]}\n")


@dataclass
class Dataset:
    records: list
    leads: int
    length: int
    class_names: list

    def __len__(self):
        return len(self.records)


def read_dataset(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise ValueError(f"{path}: line 1: missing metadata line")
    try:
        meta = json.loads(lines[0])
        leads, length, names = int(meta["L"]), int(meta["T"]), list(meta["class_names"])
        version = meta["format_version"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"{path}: line 1: malformed metadata ({exc})") from None
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    records = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            ecg = np.asarray(obj["ecg"], dtype=np.float32).astype(np.float64)
            rec = SignalRecord(str(obj["id"]), ecg, str(obj["report"]), int(obj["label"]), str(obj["class_name"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}: line {n}: malformed record ({exc})") from None
        if ecg.shape != (leads, length):
            raise ValueError(f"{path}: line {n}: ecg shape {ecg.shape} does not match header ({leads}, {length})")
        if not np.all(np.isfinite(ecg)):
            raise ValueError(f"{path}: line {n}: non-finite ecg value")
        records.append(rec)
    return Dataset(records, leads, length, names)
