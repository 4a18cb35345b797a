"""Game JSON files and report serialization."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .game import MAX_PLAYERS, InvalidInputError, PotentialGame


class GameFormatError(InvalidInputError):
    pass


def game_to_dict(game: PotentialGame) -> dict:
    out = {"num_players": game.num_players, "potential": [float(v) for v in game.potential]}
    if game.name is not None:
        out["name"] = game.name
    if game.seed is not None:
        out["seed"] = game.seed
    return out


def game_from_dict(data) -> PotentialGame:
    if not isinstance(data, dict):
        raise GameFormatError("game JSON must be an object")
    unknown = set(data) - {"num_players", "potential", "name", "seed"}
    if unknown:
        raise GameFormatError(f"unknown game fields: {sorted(unknown)}")
    n = data.get("num_players")
    if isinstance(n, bool) or not isinstance(n, int):
        raise GameFormatError(f"num_players must be an integer, got {n!r}")
    if not 1 <= n <= MAX_PLAYERS:
        raise GameFormatError(f"num_players must lie in [1, {MAX_PLAYERS}], got {n}")
    pot = data.get("potential")
    if not isinstance(pot, list):
        raise GameFormatError("potential must be an array of numbers")
    if len(pot) != 2**n:
        raise GameFormatError(
            f"potential has {len(pot)} entries; expected 2^{n} = {2**n} for num_players={n}"
        )
    for i, v in enumerate(pot):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise GameFormatError(f"potential[{i}] is not a number: {v!r}")
        if not math.isfinite(v):
            raise GameFormatError(f"potential[{i}] is not finite: {v!r}")
    name = data.get("name")
    if name is not None and not isinstance(name, str):
        raise GameFormatError("name must be a string")
    seed = data.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise GameFormatError("seed must be an integer")
    return PotentialGame(n, np.array(pot, dtype=float), name=name, seed=seed)


def dumps_game(game: PotentialGame) -> str:
    # json emits repr() of floats, which round-trips exactly
    return json.dumps(game_to_dict(game), indent=2)


def loads_game(text: str) -> PotentialGame:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameFormatError(f"malformed game JSON: {exc}") from exc
    return game_from_dict(data)


def save_game(game: PotentialGame, path) -> None:
    Path(path).write_text(dumps_game(game) + "\n")


def load_game(path) -> PotentialGame:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise GameFormatError(f"cannot read game file {path}: {exc}") from exc
    return loads_game(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps_report(report) -> str:
    data = report.to_dict() if hasattr(report, "to_dict") else report
    return json.dumps(_jsonable(data), indent=2)


def save_report(report, path) -> None:
    Path(path).write_text(dumps_report(report) + "\n")
