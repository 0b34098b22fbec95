"""XYZ parsing and radius-graph construction (non-periodic, brute force)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEdgeError, XYZParseError

# fmt: off
ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
    "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd",
    "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os",
    "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg",
    "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
# fmt: on
ATOMIC_NUMBERS = {sym.lower(): i + 1 for i, sym in enumerate(ELEMENTS)}


@dataclass
class AtomicStructure:
    species: np.ndarray  # (n,) atomic numbers
    positions: np.ndarray  # (n, 3) Angstrom
    comment: str = ""

    def __post_init__(self):
        self.species = np.asarray(self.species, dtype=np.int64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.species.shape[0] != self.positions.shape[0]:
            raise ValueError("species and positions have different lengths")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if np.any((self.species < 1) | (self.species > len(ELEMENTS))):
            raise ValueError("atomic numbers must lie in [1, 118]")

    def __len__(self):
        return self.species.shape[0]

    def with_positions(self, positions) -> "AtomicStructure":
        return AtomicStructure(self.species.copy(), np.array(positions, dtype=np.float64), self.comment)


def element_number(token: str) -> int | None:
    if token.isdigit():
        z = int(token)
        return z if 1 <= z <= len(ELEMENTS) else None
    return ATOMIC_NUMBERS.get(token.lower())


def parse_xyz(text: str) -> AtomicStructure:
    """Parse a single-frame XYZ document. Errors carry 1-based line numbers."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise XYZParseError(1, "missing atom count")
    try:
        n = int(lines[0].split()[0])
    except ValueError:
        raise XYZParseError(1, f"atom count {lines[0].strip()!r} is not an integer") from None
    if n < 0:
        raise XYZParseError(1, "atom count must be non-negative")
    comment = lines[1] if len(lines) > 1 else ""
    rows = lines[2:]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) < n:
        raise XYZParseError(
            max(len(lines), 1), f"expected {n} atom rows but the input ends after {len(rows)}"
        )
    species = np.empty(n, dtype=np.int64)
    positions = np.empty((n, 3))
    for i in range(n):
        lineno = i + 3
        parts = rows[i].split()
        if len(parts) < 4:
            raise XYZParseError(lineno, f"expected 'element x y z', got {rows[i].strip()!r}")
        z = element_number(parts[0])
        if z is None:
            raise XYZParseError(lineno, f"unknown element {parts[0]!r}")
        species[i] = z
        try:
            positions[i] = [float(v) for v in parts[1:4]]
        except ValueError:
            raise XYZParseError(lineno, f"malformed coordinate in {rows[i].strip()!r}") from None
        if not np.all(np.isfinite(positions[i])):
            raise XYZParseError(lineno, "coordinates must be finite")
    if any(r.strip() for r in rows[n:]):
        raise XYZParseError(n + 3, f"unexpected content after {n} atom rows")
    return AtomicStructure(species, positions, comment)


def format_xyz(structure: AtomicStructure, comment: str | None = None) -> str:
    comment = structure.comment if comment is None else comment
    out = [str(len(structure)), comment]
    for z, (x, y, w) in zip(structure.species, structure.positions):
        out.append(f"{ELEMENTS[z - 1]} {x:.10f} {y:.10f} {w:.10f}")
    return "\n".join(out) + "\n"


@dataclass
class AtomGraph:
    """Directed edges ``src -> dst`` with ``vectors = pos[src] - pos[dst]``.

    Edges are ordered by target, then by ``(distance, source index)``.
    """

    structure: AtomicStructure
    src: np.ndarray
    dst: np.ndarray
    vectors: np.ndarray
    distances: np.ndarray
    cutoff: float
    max_neighbors: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.structure)

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)


def build_graph(structure: AtomicStructure, cutoff: float, max_neighbors: int) -> AtomGraph:
    """All ``j -> i`` with ``0 < |r_ij| <= cutoff``, keeping the ``max_neighbors`` nearest per target.

    Ties in distance are broken by ascending source index.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    if int(max_neighbors) != max_neighbors or max_neighbors < 1:
        raise ValueError("max_neighbors must be a positive integer")
    pos = structure.positions
    n = pos.shape[0]
    diff = pos[None, :, :] - pos[:, None, :]  # diff[i, j] = pos[j] - pos[i]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    off_diag = ~np.eye(n, dtype=bool)
    if np.any((dist == 0.0) & off_diag):
        i, j = np.argwhere((dist == 0.0) & off_diag)[0]
        raise DegenerateEdgeError(f"atoms {i} and {j} share the same position")
    src, dst = [], []
    for i in range(n):
        cand = np.flatnonzero(off_diag[i] & (dist[i] <= cutoff))
        order = np.lexsort((cand, dist[i, cand]))
        keep = cand[order[: int(max_neighbors)]]
        src.append(keep)
        dst.append(np.full(keep.shape[0], i, dtype=np.int64))
    src = np.concatenate(src).astype(np.int64) if n else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst).astype(np.int64) if n else np.zeros(0, dtype=np.int64)
    vectors = pos[src] - pos[dst]
    distances = dist[dst, src]
    return AtomGraph(structure, src, dst, vectors, distances, float(cutoff), int(max_neighbors))


def random_structure(
    rng: np.random.Generator,
    n_atoms: int,
    box: float = 6.0,
    min_distance: float = 0.8,
    max_species: int = 10,
    grid: float = 1.0 / 64.0,
) -> AtomicStructure:
    """Random non-overlapping structure with coordinates on a ``grid``-spaced lattice.

    Lattice coordinates make sums of positions exact in floating point, which
    the translation-invariance checks rely on.
    """
    positions = np.zeros((0, 3))
    tries = 0
    while positions.shape[0] < n_atoms:
        tries += 1
        if tries > 10000 * max(n_atoms, 1):
            raise ValueError("could not place atoms; enlarge the box")
        p = np.round(rng.uniform(0.0, box, 3) / grid) * grid
        if positions.shape[0] and np.min(np.linalg.norm(positions - p, axis=1)) < min_distance:
            continue
        positions = np.vstack([positions, p])
    species = rng.integers(1, max_species + 1, n_atoms)
    return AtomicStructure(species, positions)
