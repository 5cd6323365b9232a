"""JSON schemas for models, parameters and input sets, plus the bench config file.

Ising model::

    {"n": 3, "edges": [[0, 1, J01], [1, 2, J12]], "m_ext": [h0, h1, h2]}

Parameters::

    {"alpha": [[i, j, a], ...], "beta": [[i, j, b], ...], "kappa": [...], "gamma": [...]}

Gaussian model (block rows/columns ordered ``i`` then ``j``)::

    {"n": 2, "edges": [[0, 1, [[p_ii, p_ij], [p_ij, p_jj]]]], "p_ext": [...], "mu_ext": [...]}

Input sets::

    {"m_ext": [[...], ...], "targets": [[...], ...]}        # binary; targets optional
    {"p_ext": [[...], ...], "mu_ext": [[...], ...]}          # Gaussian

Output is written with sorted keys and a trailing newline so reruns are
byte-identical.
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, PRESETS, config_with
from .gaussian import GaussianInputs, GaussianModel
from .model import CbpParams, IsingModel, TrainingSet, UndirectedGraph, build_ising


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(obj, path) -> None:
    text = dumps(obj)
    if path is None or str(path) == "-":
        print(text, end="")
    else:
        Path(path).write_text(text)


def read_json(path):
    return json.loads(Path(path).read_text())


def _floats(arr) -> list:
    return np.asarray(arr, dtype=float).tolist()


def model_to_dict(model: IsingModel) -> dict:
    return {
        "n": model.n,
        "edges": [[i, j, float(J)] for (i, j), J in zip(model.graph.edges, model.couplings)],
        "m_ext": _floats(model.m_ext),
    }


def model_from_dict(data: dict) -> IsingModel:
    n = int(data["n"])
    edges = [(int(i), int(j)) for i, j, _ in data["edges"]]
    graph = UndirectedGraph(n, edges)
    return build_ising(graph, {(int(i), int(j)): float(J) for i, j, J in data["edges"]}, data.get("m_ext", [0.0] * n))


def params_to_dict(params: CbpParams, graph: UndirectedGraph) -> dict:
    return {
        "alpha": [[i, j, float(a)] for (i, j), a in zip(graph.edges, params.alpha)],
        "beta": [[i, j, float(b)] for (i, j), b in zip(graph.edges, params.beta)],
        "kappa": _floats(params.kappa),
        "gamma": _floats(params.gamma),
    }


def params_from_dict(data: dict, graph: UndirectedGraph) -> CbpParams:
    return CbpParams.from_maps(
        graph,
        {(int(i), int(j)): v for i, j, v in data["alpha"]},
        {(int(i), int(j)): v for i, j, v in data["beta"]},
        data["kappa"],
        data["gamma"],
    )


def gaussian_to_dict(gmodel: GaussianModel) -> dict:
    return {
        "n": gmodel.graph.node_count,
        "edges": [[i, j, [[float(a), float(c)], [float(c), float(b)]]] for (i, j), (a, c, b) in zip(gmodel.graph.edges, gmodel.blocks)],
        "p_ext": _floats(gmodel.p_ext),
        "mu_ext": _floats(gmodel.mu_ext),
    }


def gaussian_from_dict(data: dict) -> GaussianModel:
    graph = UndirectedGraph(int(data["n"]), [(int(i), int(j)) for i, j, _ in data["edges"]])
    blocks = {(int(i), int(j)): blk for i, j, blk in data["edges"]}
    for (i, j), blk in blocks.items():
        if blk[0][1] != blk[1][0]:
            raise ValueError(f"block on edge {(i, j)} is not symmetric")
    return GaussianModel.from_block_map(graph, blocks, data["p_ext"], data["mu_ext"])


def inputs_to_dict(inputs: TrainingSet) -> dict:
    out = {"m_ext": _floats(inputs.m_ext)}
    if inputs.targets is not None:
        out["targets"] = _floats(inputs.targets)
    return out


def inputs_from_dict(data: dict) -> TrainingSet:
    return TrainingSet(np.asarray(data["m_ext"], dtype=float), data.get("targets"))


def gaussian_inputs_to_dict(inputs: GaussianInputs) -> dict:
    return {"p_ext": _floats(inputs.p_ext), "mu_ext": _floats(inputs.mu_ext)}


def gaussian_inputs_from_dict(data: dict) -> GaussianInputs:
    return GaussianInputs(np.atleast_2d(np.asarray(data["p_ext"], dtype=float)), np.atleast_2d(np.asarray(data["mu_ext"], dtype=float)))


# Bench configuration ---------------------------------------------------------

_LIST_KEYS = {"p_list": float, "splits": int, "methods": str}
_SCALAR_KEYS = {
    "topology": str,
    "graphs_per_p": int,
    "n_nodes": int,
    "seed": int,
    "T": int,
    "optimizer": str,
    "max_epochs": int,
    "unsup_examples": int,
    "unsup_damping": float,
    "unsup_eval_iters": int,
    "mean_field_damping": float,
}


def parse_config_values(values: dict) -> dict:
    """Convert string values (from a file or the command line) into config fields."""
    out = {}
    for key, raw in values.items():
        if key in _LIST_KEYS:
            out[key] = tuple(_LIST_KEYS[key](v.strip()) for v in str(raw).split(",") if v.strip())
        elif key in _SCALAR_KEYS:
            out[key] = _SCALAR_KEYS[key](raw)
        elif key != "preset":
            raise ValueError(f"unknown config key {key!r}")
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read an INI-style file with an ``[experiment]`` section, then apply overrides.

    The optional key ``preset`` (``desk`` or ``full``) picks the base
    configuration; every other key replaces one field. Lists are
    comma-separated, e.g. ``p_list = 0.2, 0.6, 1.0``.
    """
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        if "experiment" not in parser:
            raise ValueError(f"{path} has no [experiment] section")
        values = dict(parser["experiment"])
    preset = overrides.pop("preset", None) or values.get("preset", "desk")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    config = config_with(PRESETS[preset], **parse_config_values(values))
    return config_with(config, **parse_config_values({k: v for k, v in overrides.items() if v is not None}))
