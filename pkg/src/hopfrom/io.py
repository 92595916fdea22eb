"""Versioned on-disk artifact format ("romart v1").

A reduced-order model artifact is a JSON document: human-inspectable
metadata (expansion point, order, style, provenance, mesh text when a
finite-element problem is attached) plus the numeric coefficient tables
embedded as base64-encoded little-endian float64 blocks.  Writing is
deterministic — identical models serialize to byte-identical files.
"""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

from . import __version__
from .exceptions import ConfigError
from .multiindex import MonomialTable, PolyMap
from .parametrisation import N_COORDS, RomArtifact, StyleChoice
from .spectral import ModeSet

FORMAT_TAG = "romart v1"


def _encode_array(arr: np.ndarray) -> dict:
    """Complex or real array -> base64 little-endian float64 payload."""
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        flat = np.empty(arr.size * 2, dtype="<f8")
        flat[0::2] = arr.real.ravel()
        flat[1::2] = arr.imag.ravel()
        kind = "complex"
    else:
        flat = np.ascontiguousarray(arr.ravel(), dtype="<f8")
        kind = "real"
    return {"kind": kind, "shape": list(arr.shape),
            "data": base64.b64encode(flat.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    shape = tuple(obj["shape"])
    if obj["kind"] == "complex":
        arr = flat[0::2] + 1j * flat[1::2]
    elif obj["kind"] == "real":
        arr = flat.copy()
    else:
        raise ConfigError(f"unknown array kind {obj['kind']!r}")
    return arr.reshape(shape)


def _polymap_payload(pmap: PolyMap) -> dict:
    return {str(p): _encode_array(pmap.coeffs[p]) for p in pmap.orders()}


def _polymap_from_payload(obj: dict, table: MonomialTable, dim: int) -> PolyMap:
    pmap = PolyMap(table, dim)
    for key, payload in obj.items():
        arr = _decode_array(payload)
        pmap.coeffs[int(key)] = np.ascontiguousarray(arr, dtype=complex)
    return pmap


def artifact_document(rom: RomArtifact) -> str:
    """Serialize to the canonical JSON text (deterministic key order)."""
    doc = {
        "format": FORMAT_TAG,
        "tool_version": __version__,
        "re0": rom.re0,
        "order": rom.order,
        "style": {"kind": rom.style.kind,
                  "resonance_tol": rom.style.resonance_tol},
        "n_dof": rom.W.dim,
        "n_coords": N_COORDS,
        "solve_count": rom.solve_count,
        "provenance": rom.provenance,
        "modes": {
            "lambdas": _encode_array(rom.modes.lambdas),
            "phi": _encode_array(rom.modes.phi),
            "psi": _encode_array(rom.modes.psi),
            "inner_product": rom.modes.inner_product,
        },
        "W": _polymap_payload(rom.W),
        "f": _polymap_payload(rom.f),
    }
    if rom.steady is not None:
        doc["steady"] = {
            "u0": _encode_array(np.asarray(rom.steady.u0)),
            "p0": _encode_array(np.asarray(rom.steady.p0)),
            "re0": rom.steady.re0,
            "residual": rom.steady.residual,
            "newton_iters": rom.steady.newton_iters,
        }
    if rom.dae is not None and "fem" in rom.dae.meta:
        from .fem.mesh import write_mesh_text
        doc["mesh"] = write_mesh_text(rom.dae.meta["fem"].mesh)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def artifact_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_artifact(rom: RomArtifact, path: str) -> str:
    """Write the artifact; returns its content hash."""
    text = artifact_document(rom)
    with open(path, "w") as fh:
        fh.write(text)
        fh.write("\n")
    return artifact_hash(text)


def load_artifact(path: str, with_dae: bool = True) -> RomArtifact:
    """Read an artifact; when it embeds a mesh, the finite-element problem
    and quadratic system are rebuilt so the artifact is self-contained."""
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format") != FORMAT_TAG:
        raise ConfigError(f"{path}: not a '{FORMAT_TAG}' artifact")
    order = int(obj["order"])
    n_dof = int(obj["n_dof"])
    table = MonomialTable(N_COORDS, order)
    style = StyleChoice(kind=obj["style"]["kind"],
                        resonance_tol=float(obj["style"]["resonance_tol"]))
    modes = ModeSet(lambdas=_decode_array(obj["modes"]["lambdas"]),
                    phi=_decode_array(obj["modes"]["phi"]),
                    psi=_decode_array(obj["modes"]["psi"]),
                    inner_product=obj["modes"]["inner_product"])
    W = _polymap_from_payload(obj["W"], table, n_dof)
    f = _polymap_from_payload(obj["f"], table, N_COORDS)

    steady = None
    dae = None
    if "steady" in obj:
        from .fem.steady import SteadyState
        s = obj["steady"]
        steady = SteadyState(u0=_decode_array(s["u0"]),
                             p0=_decode_array(s["p0"]),
                             re0=float(s["re0"]),
                             residual=float(s["residual"]),
                             newton_iters=int(s["newton_iters"]))
    if with_dae and "mesh" in obj and steady is not None:
        from .fem.mesh import parse_mesh_text
        from .fem.steady import assemble_dae
        from .fem.taylor_hood import build_fem
        mesh = parse_mesh_text(obj["mesh"], source=path)
        fem = build_fem(mesh)
        dae = assemble_dae(fem, steady)

    return RomArtifact(re0=float(obj["re0"]), order=order, style=style,
                       modes=modes, W=W, f=f, table=table, steady=steady,
                       dae=dae, solve_count=int(obj["solve_count"]),
                       provenance=dict(obj.get("provenance", {})))
