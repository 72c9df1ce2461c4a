"""Load protocol scores, APY series, TVL and FX data from CSV files or a
remote yield API with on-disk caching.

File formats (headers required):
    scores: protocol_id,name,chain,score,tvl   (tvl may be empty)
    yields: date,protocol_id,apy               (long format, ISO dates)
    fx:     date,rate                          (USD per stablecoin unit)

APY values are fractions (0.05 = 5%); a trailing ``%`` is accepted and
divided by 100.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import requests

from .backtest import YieldPanel
from .domain import DatedSeries, ProtocolRecord, Universe, validate_universe
from .errors import (
    DuplicateObservation,
    InvalidApy,
    MappingError,
    NetworkError,
    NonPositiveRate,
    NonPositiveScore,
    ParseError,
    UnknownProtocol,
)

SCORES_HEADER = ["protocol_id", "name", "chain", "score", "tvl"]
YIELDS_HEADER = ["date", "protocol_id", "apy"]
FX_HEADER = ["date", "rate"]


@dataclass(frozen=True)
class DataBundle:
    universe: Universe
    panel: YieldPanel

    def __post_init__(self):
        known = set(self.universe.ids)
        for pid in self.panel.series:
            if pid not in known:
                raise UnknownProtocol(pid, "series id not in universe")


# --- CSV loading --------------------------------------------------------------


def _read_rows(path, expected_header: list[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "file is empty; a header row is required")
        if [h.strip() for h in header] != expected_header:
            raise ParseError(
                path, 1, f"expected header {','.join(expected_header)!r}, got {header!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(expected_header):
                raise ParseError(
                    path, lineno, f"expected {len(expected_header)} fields, got {len(row)}"
                )
            rows.append((lineno, [cell.strip() for cell in row]))
    return rows


def _parse_float(text: str, path, lineno: int, name: str, percent_ok: bool = False) -> float:
    raw = text.strip()
    scale = 1.0
    if percent_ok and raw.endswith("%"):
        raw = raw[:-1].strip()
        scale = 0.01
    try:
        value = float(raw) * scale
    except ValueError:
        raise ParseError(path, lineno, f"cannot parse {name} from {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, lineno, f"{name} must be finite, got {text!r}")
    return value


def _parse_date(text: str, path, lineno: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(path, lineno, f"cannot parse date from {text!r}") from None


def load_scores(path) -> Universe:
    """Read the scores CSV into a validated universe."""
    records = []
    for lineno, (pid, name, chain, score_text, tvl_text) in _read_rows(path, SCORES_HEADER):
        if not pid:
            raise ParseError(path, lineno, "protocol_id must not be empty")
        score = _parse_float(score_text, path, lineno, "score")
        if score <= 0:
            raise NonPositiveScore(pid, f"{path}:{lineno}")
        tvl = None
        if tvl_text:
            tvl = _parse_float(tvl_text, path, lineno, "tvl")
            if tvl < 0:
                raise ParseError(path, lineno, f"tvl must be nonnegative, got {tvl_text!r}")
        records.append(ProtocolRecord(pid, score, name=name, chain=chain, tvl=tvl))
    return validate_universe(records)


def load_yields(path, ids: Iterable[str]) -> YieldPanel:
    """Read the long-format yields CSV into per-protocol series.

    Rows must name a protocol in `ids`; the same (protocol, date) pair may
    appear only once.
    """
    known = set(ids)
    observations: dict[str, dict[dt.date, float]] = {}
    for lineno, (date_text, pid, apy_text) in _read_rows(path, YIELDS_HEADER):
        date = _parse_date(date_text, path, lineno)
        if pid not in known:
            raise UnknownProtocol(pid, f"{path}:{lineno}")
        apy = _parse_float(apy_text, path, lineno, "apy", percent_ok=True)
        if apy <= -1.0:
            raise InvalidApy(f"{path}:{lineno}: APY must be > -1, got {apy_text!r}")
        per_id = observations.setdefault(pid, {})
        if date in per_id:
            raise DuplicateObservation(
                f"{path}:{lineno}: duplicate observation for {pid!r} on {date}"
            )
        per_id[date] = apy
    series = {
        pid: DatedSeries.from_pairs(per_id.items())
        for pid, per_id in sorted(observations.items())
    }
    return YieldPanel(series=series)


def load_fx(path) -> DatedSeries:
    """Read the FX CSV (USD per stablecoin unit); unsorted rows are sorted."""
    pairs = []
    for lineno, (date_text, rate_text) in _read_rows(path, FX_HEADER):
        date = _parse_date(date_text, path, lineno)
        rate = _parse_float(rate_text, path, lineno, "rate")
        if rate <= 0:
            raise NonPositiveRate(f"{path}:{lineno}: rate must be > 0, got {rate_text!r}")
        pairs.append((date, rate))
    return DatedSeries.from_pairs(pairs)


# --- CSV writing (round-trip counterparts) ------------------------------------


def write_scores(universe: Universe, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORES_HEADER)
        for p in universe:
            tvl = "" if p.tvl is None else repr(p.tvl)
            writer.writerow([p.protocol_id, p.name, p.chain, repr(p.score), tvl])


def write_yields(panel: YieldPanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(YIELDS_HEADER)
        for pid in sorted(panel.series):
            for date, apy in panel.series[pid].entries:
                writer.writerow([date.isoformat(), pid, repr(apy)])


def write_fx(series: DatedSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FX_HEADER)
        for date, rate in series.entries:
            writer.writerow([date.isoformat(), repr(rate)])


def save_bundle(bundle: DataBundle, out_dir) -> list[Path]:
    """Write a bundle to scores/yields(/fx) CSVs; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    write_scores(bundle.universe, out / "scores.csv")
    written.append(out / "scores.csv")
    write_yields(bundle.panel, out / "yields.csv")
    written.append(out / "yields.csv")
    if bundle.panel.fx is not None:
        write_fx(bundle.panel.fx, out / "fx.csv")
        written.append(out / "fx.csv")
    return written


def load_bundle(in_dir) -> DataBundle:
    """Inverse of save_bundle; fx.csv is optional."""
    base = Path(in_dir)
    universe = load_scores(base / "scores.csv")
    panel = load_yields(base / "yields.csv", universe.ids)
    fx_path = base / "fx.csv"
    if fx_path.exists():
        panel = YieldPanel(series=panel.series, fx=load_fx(fx_path))
    return DataBundle(universe, panel)


# --- remote fetch with on-disk cache ------------------------------------------

DEFAULT_FIELD_MAP: dict[str, dict[str, str]] = {
    "scores": {
        "protocol_id": "protocol_id",
        "name": "name",
        "chain": "chain",
        "score": "score",
        "tvl": "tvl",
    },
    "yields": {"date": "date", "apy": "apy"},
    "fx": {"date": "date", "rate": "rate"},
}


@dataclass(frozen=True)
class FetchSpec:
    """Where to fetch each resource and how to cache and map the payloads.

    `endpoints` maps resource names ("scores", "yields", "fx") to path
    templates; the yields template may contain ``{protocol_id}``.
    `field_map` renames payload keys to our field names per resource, so
    provider-specific schemas stay in configuration.
    """

    base_url: str
    endpoints: Mapping[str, str]
    cache_dir: Path
    cache_ttl: float = 3600.0
    field_map: Mapping[str, Mapping[str, str]] = field(
        default_factory=lambda: DEFAULT_FIELD_MAP
    )
    max_retries: int = 3
    retry_backoff: float = 0.25
    timeout: float = 10.0

    def __post_init__(self):
        if self.cache_ttl < 0:
            raise ValueError("cache_ttl must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        object.__setattr__(self, "cache_dir", Path(self.cache_dir))
        if "scores" not in self.endpoints or "yields" not in self.endpoints:
            raise ValueError("endpoints must define at least 'scores' and 'yields'")


_key_locks: dict[str, threading.Lock] = {}
_key_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    with _key_locks_guard:
        return _key_locks.setdefault(str(path), threading.Lock())


def _cache_paths(spec: FetchSpec, resource: str, key: str) -> tuple[Path, Path]:
    base = spec.cache_dir / resource
    return base / f"{key}.json", base / f"{key}.meta"


def _cache_read(spec: FetchSpec, resource: str, key: str):
    payload_path, meta_path = _cache_paths(spec, resource, key)
    with _lock_for(payload_path):
        try:
            with open(meta_path, encoding="utf-8") as fh:
                meta = json.load(fh)
            age = time.time() - float(meta["fetched_at"])
            if age > spec.cache_ttl:
                return None
            with open(payload_path, encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, ValueError, KeyError):
            # absent, expired or corrupt cache entries are plain misses
            return None


def _cache_write(spec: FetchSpec, resource: str, key: str, payload, url: str) -> None:
    payload_path, meta_path = _cache_paths(spec, resource, key)
    payload_path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(payload_path):
        # payload lands before meta, and both via atomic rename, so a reader
        # can never mistake a partial file for a hit
        tmp = payload_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        os.replace(tmp, payload_path)
        tmp_meta = meta_path.with_suffix(".meta.tmp")
        tmp_meta.write_text(
            json.dumps({"fetched_at": time.time(), "url": url}, sort_keys=True),
            encoding="utf-8",
        )
        os.replace(tmp_meta, meta_path)


def _http_get(spec: FetchSpec, session, url: str, params: dict):
    last_error = None
    for attempt in range(spec.max_retries + 1):
        if attempt:
            time.sleep(spec.retry_backoff * (2 ** (attempt - 1)))
        try:
            response = session.get(url, params=params, timeout=spec.timeout)
        except requests.RequestException as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            continue
        status = getattr(response, "status_code", 200)
        if status >= 500:
            last_error = f"server error {status}"
            continue
        if status >= 400:
            raise NetworkError(f"GET {url} failed with status {status}")
        try:
            return response.json()
        except ValueError as exc:
            raise NetworkError(f"GET {url} returned invalid JSON: {exc}") from None
    raise NetworkError(
        f"GET {url} failed after {spec.max_retries + 1} attempts ({last_error})"
    )


def _fetch_resource(spec: FetchSpec, session, resource: str, key: str,
                    path: str, params: dict):
    cached = _cache_read(spec, resource, key)
    if cached is not None:
        return cached
    url = spec.base_url.rstrip("/") + "/" + path.lstrip("/")
    payload = _http_get(spec, session, url, params)
    _cache_write(spec, resource, key, payload, url)
    return payload


def _mapped(resource: str, field_map: Mapping[str, str], item: Mapping, name: str,
            required: bool = True):
    key = field_map.get(name, name)
    if key not in item or item[key] is None:
        if required:
            raise MappingError(resource, key)
        return None
    return item[key]


def fetch_remote(
    spec: FetchSpec,
    ids: Sequence[str],
    date_range: tuple[dt.date, dt.date],
    session=None,
) -> DataBundle:
    """Fetch scores, yields and (optionally) FX from the configured API.

    Raw JSON payloads are cached under ``cache_dir/<resource>/<key>.json``
    keyed by (resource, id, date_range); a cache hit younger than the TTL
    skips the network entirely.  Payloads pass through the same validation
    as the file loaders, so an equivalent local file produces an identical
    bundle.
    """
    if session is None:
        session = requests.Session()
    start, end = date_range
    range_key = f"{start.isoformat()}_{end.isoformat()}"

    scores_map = spec.field_map.get("scores", DEFAULT_FIELD_MAP["scores"])
    payload = _fetch_resource(
        spec, session, "scores", f"all_{range_key}", spec.endpoints["scores"],
        {"start": start.isoformat(), "end": end.isoformat()},
    )
    records = []
    for item in payload:
        pid = str(_mapped("scores", scores_map, item, "protocol_id"))
        score = float(_mapped("scores", scores_map, item, "score"))
        name = _mapped("scores", scores_map, item, "name", required=False) or ""
        chain = _mapped("scores", scores_map, item, "chain", required=False) or ""
        tvl = _mapped("scores", scores_map, item, "tvl", required=False)
        records.append(
            ProtocolRecord(pid, score, name=str(name), chain=str(chain),
                           tvl=None if tvl is None else float(tvl))
        )
    universe = validate_universe(records)

    yields_map = spec.field_map.get("yields", DEFAULT_FIELD_MAP["yields"])
    series: dict[str, DatedSeries] = {}
    for pid in sorted(ids):
        path = spec.endpoints["yields"].format(protocol_id=pid)
        payload = _fetch_resource(
            spec, session, "yields", f"{pid}_{range_key}", path,
            {"start": start.isoformat(), "end": end.isoformat()},
        )
        pairs = []
        for item in payload:
            date = dt.date.fromisoformat(str(_mapped("yields", yields_map, item, "date")))
            apy = float(_mapped("yields", yields_map, item, "apy"))
            pairs.append((date, apy))
        if pairs:
            series[pid] = DatedSeries.from_pairs(pairs)

    fx = None
    if "fx" in spec.endpoints:
        fx_map = spec.field_map.get("fx", DEFAULT_FIELD_MAP["fx"])
        payload = _fetch_resource(
            spec, session, "fx", f"all_{range_key}", spec.endpoints["fx"],
            {"start": start.isoformat(), "end": end.isoformat()},
        )
        pairs = []
        for item in payload:
            date = dt.date.fromisoformat(str(_mapped("fx", fx_map, item, "date")))
            rate = float(_mapped("fx", fx_map, item, "rate"))
            pairs.append((date, rate))
        fx = DatedSeries.from_pairs(pairs)

    return DataBundle(universe, YieldPanel(series=series, fx=fx))
