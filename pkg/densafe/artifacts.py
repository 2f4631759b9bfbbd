"""Every file densafe reads or writes: datasets, certificates, trajectories, audits and run manifests."""
import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import click
import numpy as np

from densafe.services.consistency import ConsistencyPolytope, Dataset
from densafe.services.poly import Polynomial, PolyVector, StructuralError
from densafe.services.synth import Degrees, InfeasibleResult, SafetyCertificate

CERTIFICATE_SCHEMA = 1

# solver fields that vary from run to run and stay out of hashed files
_VOLATILE_STATS = ("solve_time",)


class ArtifactError(ValueError):
    pass


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path, payload):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"cannot read {path}: {e}") from e


def _clean(value):
    """Plain JSON types only; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


# --- datasets ---

def write_dataset(path, data: Dataset):
    """CSV with columns idx,x1..xn,u,y1..yn; floats in shortest round-trip form."""
    _ensure_parent(path)
    n = data.n
    header = ["idx"] + [f"x{i + 1}" for i in range(n)] + ["u"] + [f"y{i + 1}" for i in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s, (x, u, y) in enumerate(data.samples()):
            writer.writerow([s] + [repr(float(v)) for v in x] + [repr(float(u))] + [repr(float(v)) for v in y])
    return path


def read_dataset(path, epsilon: float) -> Dataset:
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ArtifactError(f"cannot read dataset {path}: {e}") from e
    if not rows:
        raise ArtifactError(f"dataset {path} is empty")
    header = rows[0]
    if "u" not in header or header[0] != "idx":
        raise ArtifactError(f"dataset {path}: unexpected header {header}")
    n = header.index("u") - 1
    if len(header) != 2 * n + 2:
        raise ArtifactError(f"dataset {path}: header {header} is not idx,x1..xn,u,y1..yn")
    try:
        values = np.array([[float(v) for v in row[1:]] for row in rows[1:] if row], dtype=float)
    except ValueError as e:
        raise ArtifactError(f"dataset {path}: {e}") from e
    values = values.reshape(-1, 2 * n + 1)
    return Dataset(values[:, :n], values[:, n], values[:, n + 1:], epsilon)


# --- polynomials ---

def poly_to_json(p: Polynomial):
    return [[list(mono), coeff] for mono, coeff in p.terms.items()]


def poly_from_json(terms, n: int) -> Polynomial:
    out = {}
    for mono, coeff in terms:
        if len(mono) != n:
            raise ArtifactError(f"monomial {mono} has {len(mono)} exponents, expected {n}")
        out[tuple(int(e) for e in mono)] = float(coeff)
    return Polynomial(out, n)


# --- certificates ---

def certificate_to_dict(cert: SafetyCertificate, variables) -> dict:
    stats = {k: v for k, v in cert.solver_stats.items() if k not in _VOLATILE_STATS}
    return {
        "schema": CERTIFICATE_SCHEMA,
        "kind": "certificate",
        "variables": list(variables),
        "rho": poly_to_json(cert.rho),
        "psi": poly_to_json(cert.psi),
        "rho_text": cert.rho.to_string(variables),
        "psi_text": cert.psi.to_string(variables),
        "y": [poly_to_json(p) for p in cert.y],
        "s1": poly_to_json(cert.s1),
        "s2": poly_to_json(cert.s2),
        "sigma3": poly_to_json(cert.sigma3) if cert.sigma3 is not None else None,
        "sigma4": poly_to_json(cert.sigma4) if cert.sigma4 is not None else None,
        "sigma5": poly_to_json(cert.sigma5) if cert.sigma5 is not None else None,
        "c1": cert.c1,
        "c2": cert.c2,
        "margin": cert.margin,
        "degrees": cert.degrees.as_dict(),
        "grams": {tag: np.asarray(Q).tolist() for tag, Q in cert.grams.items()},
        "kept_rows": list(cert.kept_rows) if cert.kept_rows is not None else None,
        "unsafe_inflation": cert.unsafe_inflation,
        "localize_psi_bound": cert.localize_psi_bound,
        "solver_stats": stats,
        "verification": cert.verification.to_dict() if cert.verification is not None else None,
        "audit": cert.audit.to_dict() if cert.audit is not None else None,
        "provenance": cert.provenance,
    }


def write_certificate(path, cert: SafetyCertificate, variables):
    return write_json(path, certificate_to_dict(cert, variables))


def read_certificate(path) -> SafetyCertificate:
    data = read_json(path)
    if data.get("kind") != "certificate":
        raise ArtifactError(f"{path} holds no certificate (kind={data.get('kind')!r})")
    if data.get("schema") != CERTIFICATE_SCHEMA:
        raise ArtifactError(f"{path}: unsupported certificate schema {data.get('schema')}")
    try:
        n = len(data["variables"])
        y = [poly_from_json(p, n) for p in data["y"]]
        return SafetyCertificate(
            rho=poly_from_json(data["rho"], n),
            psi=poly_from_json(data["psi"], n),
            y=PolyVector(y, n),
            s1=poly_from_json(data["s1"], n),
            s2=poly_from_json(data["s2"], n),
            c1=float(data["c1"]),
            c2=float(data["c2"]),
            degrees=Degrees(**data["degrees"]),
            grams={tag: np.asarray(Q, dtype=float) for tag, Q in data["grams"].items()},
            sigma3=poly_from_json(data["sigma3"], n) if data.get("sigma3") is not None else None,
            sigma4=poly_from_json(data["sigma4"], n) if data.get("sigma4") is not None else None,
            sigma5=poly_from_json(data["sigma5"], n) if data.get("sigma5") is not None else None,
            margin=data.get("margin"),
            kept_rows=tuple(data["kept_rows"]) if data.get("kept_rows") is not None else None,
            unsafe_inflation=float(data.get("unsafe_inflation", 0.0)),
            localize_psi_bound=bool(data.get("localize_psi_bound", False)),
            solver_stats=data.get("solver_stats", {}),
            provenance=data.get("provenance", {}),
        )
    except (KeyError, TypeError, ValueError, StructuralError) as e:
        raise ArtifactError(f"{path}: malformed certificate: {e}") from e


def write_infeasible(path, result: InfeasibleResult, provenance=None):
    stats = {k: v for k, v in result.report.stats().items() if k not in _VOLATILE_STATS}
    return write_json(path, {
        "schema": CERTIFICATE_SCHEMA,
        "kind": "infeasible",
        "message": result.message,
        "degrees": result.degrees.as_dict(),
        "solver_stats": stats,
        "provenance": provenance or {},
    })


# --- simulation output ---

def write_trajectories(path, trajectories, variables):
    """CSV traj_id,t,x1..xn,u,rho,w1..wn,terminated; the reason appears on each trajectory's last row."""
    _ensure_parent(path)
    n = len(variables)
    header = ["traj_id", "t"] + [f"x{i + 1}" for i in range(n)] + ["u", "rho"] + [f"w{i + 1}" for i in range(n)] + ["terminated"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, traj in enumerate(trajectories):
            last = len(traj.times) - 1
            for step in range(len(traj.times)):
                writer.writerow(
                    [k, repr(float(traj.times[step]))]
                    + [repr(float(v)) for v in traj.states[step]]
                    + [repr(float(traj.controls[step])), repr(float(traj.rho[step]))]
                    + [repr(float(v)) for v in traj.disturbances[step]]
                    + [traj.reason if step == last else ""]
                )
    return path


def write_grid(path, grid, variables):
    """Level-set export: x1..xn,rho rows for external contour plotting."""
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(len(variables))] + ["rho"])
        for row in np.asarray(grid):
            writer.writerow([repr(float(v)) for v in row])
    return path


def write_polytope(path, P1: ConsistencyPolytope):
    """Row-per-face dump: label, e_i, then the nonzero (column, value) pairs of N_i."""
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {P1.rows} faces, {P1.columns} columns\n")
        for i in range(P1.rows):
            nz = np.flatnonzero(P1.N[i])
            pairs = " ".join(f"{j}:{P1.N[i, j]!r}" for j in nz)
            fh.write(f"{P1.tags[i].label()} {P1.e[i]!r} {pairs}\n")
    return path


def write_text(path, text):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


# --- manifests ---

@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str
    seed: int
    output_dir: str
    dataset_hash: str | None = None
    certificate: str | None = None
    files: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    timings: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command, cfg, output_dir, tool_version):
        return cls(
            command=command,
            config_hash=cfg.fingerprint,
            tool_version=tool_version,
            seed=cfg.seed,
            output_dir=os.path.abspath(output_dir),
            started=_now(),
        )

    def add_file(self, path):
        self.files[os.path.basename(path)] = file_sha256(path)

    @property
    def fingerprint(self) -> str:
        """Hash of everything except timestamps, timings and the output location."""
        body = dataclasses.asdict(self)
        for key in ("started", "finished", "timings", "output_dir"):
            body.pop(key)
        text = json.dumps(body, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def write(self, path=None):
        self.finished = _now()
        path = path or os.path.join(self.output_dir, f"{self.command}_manifest.json")
        payload = dataclasses.asdict(self)
        payload["fingerprint"] = self.fingerprint
        write_json(path, payload)
        click.echo(f"manifest: {path}")
        return path


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
