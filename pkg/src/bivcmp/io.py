"""Reading game files and writing run outputs.

Every file written here starts with a provenance block of ``# key: value``
lines (seed, config hash, package version).  Readers skip ``#`` lines, so
outputs can be fed back in.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from . import __version__
from .exchange import PosteriorDraws
from .model import PHASES, Design, GameRecord

REQUIRED_COLUMNS = ("season", "home_team", "away_team", "home_score", "away_score", "phase")


class DataError(ValueError):
    """Malformed input data; the message names the offending line."""


# ---------------------------------------------------------------------------
# provenance


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(seed: int, config: Mapping) -> dict[str, str]:
    return {"seed": str(seed), "config_hash": config_hash(config), "version": __version__}


def _header_lines(prov: Mapping | None) -> list[str]:
    return [f"# {k}: {v}\n" for k, v in (prov or {}).items()]


def read_provenance(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# games


def _data_lines(fh):
    """Yield ``(line_number, text)`` for non-comment lines."""
    for lineno, line in enumerate(fh, start=1):
        if line.startswith("#") or not line.strip():
            continue
        yield lineno, line


def parse_games(path) -> list[GameRecord]:
    """Read a game CSV.  Input order is the game index; ``game_id`` is
    optional and defaults to the 1-based data row number."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(_data_lines(fh))
    if not rows:
        raise DataError(f"{path}: missing header row")
    header_line, header_text = rows[0]
    header = next(csv.reader([header_text]))
    header = [h.strip() for h in header]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise DataError(f"{path}:{header_line}: missing column(s) {', '.join(missing)}")
    col = {name: k for k, name in enumerate(header)}
    has_id = "game_id" in col
    games, seen = [], {}
    for k, (lineno, text) in enumerate(rows[1:], start=1):
        fields = next(csv.reader([text]))
        if len(fields) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        get = {name: fields[i].strip() for name, i in col.items()}
        scores = []
        for name in ("home_score", "away_score"):
            try:
                v = int(get[name])
            except ValueError:
                raise DataError(f"{path}:{lineno}: {name} is not an integer: {get[name]!r}") from None
            if v < 0:
                raise DataError(f"{path}:{lineno}: {name} must be nonnegative")
            scores.append(v)
        if get["phase"] not in PHASES:
            raise DataError(f"{path}:{lineno}: unknown phase {get['phase']!r} "
                            f"(expected one of {', '.join(PHASES)})")
        gid = get["game_id"] if has_id else str(k)
        if gid in seen:
            raise DataError(f"{path}:{lineno}: duplicate game id {gid!r} "
                            f"(first seen on line {seen[gid]})")
        seen[gid] = lineno
        try:
            games.append(GameRecord(gid, get["season"], get["home_team"], get["away_team"],
                                    scores[0], scores[1], get["phase"]))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return games


def write_games(path, games: Iterable[GameRecord], prov: Mapping | None = None):
    with open(path, "w", newline="") as fh:
        fh.writelines(_header_lines(prov))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("game_id",) + REQUIRED_COLUMNS)
        for g in games:
            w.writerow((g.game_id, g.season, g.home_team, g.away_team, g.home_score,
                        g.away_score, g.phase))


# ---------------------------------------------------------------------------
# generic tables


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else ("nan" if np.isnan(v) else str(float(v)))
    return str(v)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], prov: Mapping | None = None):
    with open(path, "w", newline="") as fh:
        fh.writelines(_header_lines(prov))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [t for _, t in _data_lines(fh)]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_summary(path, sections: Mapping[str, Mapping], prov: Mapping | None = None):
    """Structured text: ``[section]`` headings followed by ``key: value`` lines."""
    with open(path, "w") as fh:
        fh.writelines(_header_lines(prov))
        for name, items in sections.items():
            fh.write(f"\n[{name}]\n")
            for k, v in items.items():
                fh.write(f"{k}: {_fmt(v)}\n")


def read_summary(path) -> dict[str, dict[str, str]]:
    out, current = {}, None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = out.setdefault(line[1:-1], {})
            elif current is not None:
                k, _, v = line.partition(": ")
                current[k] = v
    return out


# ---------------------------------------------------------------------------
# chains


def write_chains(path, draws: PosteriorDraws, prov: Mapping | None = None):
    """One row per retained draw, one column per scalar parameter."""
    names = None
    rows = []
    for c in draws.chains:
        cn, values = c.scalar_table()
        names = names or cn
        for k, row in enumerate(values):
            rows.append([c.chain_id, k, *row])
    write_table(path, ["chain", "draw", *names], rows, prov)


def read_chains(path):
    header, rows = read_table(path)
    arr = np.array(rows, dtype=float)
    return header[2:], arr[:, 0].astype(int), arr[:, 2:]


def chain_metadata(draws: PosteriorDraws, design: Design, prov: Mapping | None = None) -> dict:
    names, _ = draws.chains[0].scalar_table()
    mapping = {}
    for name in names:
        if name.startswith(("beta_", "gamma_")):
            k = int(name[name.index("[") + 1:-1])
            mapping[name] = design.columns[k]
        else:
            mapping[name] = name
    return {
        "provenance": dict(prov or {}),
        "model": draws.model,
        "design": design.metadata(),
        "parameters": mapping,
        "chains": [{"chain_id": c.chain_id, "spawn_key": list(c.spawn_key),
                    "n_draws": c.n_draws, "acceptance": c.acceptance} for c in draws.chains],
        "config": {k: getattr(draws.config, k) for k in draws.config.__dataclass_fields__},
    }


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)
