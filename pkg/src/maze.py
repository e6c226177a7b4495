"""Procedurele doolhoven: generatie met Prim, tokenisatie, padverificatie en taakbronnen."""
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import InvalidMazeError
from .logging_setup import get_logger
from .utils import STREAM_HELDOUT, STREAM_TRAIN, rng_stream

VOCAB_SIZE = 32
VOCAB_VERSION = 1
MIN_SIDE = 5
_FIXED_DATASET_STREAM = 12


class Token(IntEnum):
    PAD = 0
    BOS = 1
    EOS = 2
    GRID_START = 3
    GRID_END = 4
    NEWLINE = 5
    WALL = 6
    PATH = 7
    START = 8
    GOAL = 9
    PATH_START = 10
    UP = 11
    DOWN = 12
    LEFT = 13
    RIGHT = 14
    DONE = 15


class Cell(IntEnum):
    WALL = 0
    PATH = 1
    START = 2
    GOAL = 3


_SPECIAL_NAMES = {Token.PAD: "<pad>", Token.BOS: "<bos>", Token.EOS: "<eos>"}


def _build_vocab() -> Dict[int, str]:
    vocab = {}
    for token in Token:
        vocab[int(token)] = _SPECIAL_NAMES.get(token, token.name)
    for idx in range(len(Token), VOCAB_SIZE):
        vocab[idx] = f"<reserved_{idx}>"
    return vocab


VOCAB: Dict[int, str] = _build_vocab()
NAME_TO_ID: Dict[str, int] = {name: idx for idx, name in VOCAB.items()}

ACTION_TOKENS = (Token.UP, Token.DOWN, Token.LEFT, Token.RIGHT)
MOVES: Dict[int, Tuple[int, int]] = {
    Token.UP: (-1, 0),
    Token.DOWN: (1, 0),
    Token.LEFT: (0, -1),
    Token.RIGHT: (0, 1),
}
STOP_TOKENS = (int(Token.DONE), int(Token.EOS))

_CELL_TO_TOKEN = {Cell.WALL: Token.WALL, Cell.PATH: Token.PATH, Cell.START: Token.START, Cell.GOAL: Token.GOAL}
_TOKEN_TO_CELL = {int(tok): cell for cell, tok in _CELL_TO_TOKEN.items()}
_CELL_CHARS = {Cell.WALL: "#", Cell.PATH: ".", Cell.START: "S", Cell.GOAL: "G"}
_CHAR_TO_CELL = {ch: cell for cell, ch in _CELL_CHARS.items()}


@dataclass(frozen=True, eq=False)
class MazeGrid:
    cells: np.ndarray
    seed: Optional[int] = None

    @property
    def side(self) -> int:
        return int(self.cells.shape[0])

    def _find(self, cell: Cell) -> Tuple[int, int]:
        found = np.argwhere(self.cells == cell)
        if len(found) != 1:
            raise InvalidMazeError(f"Verwacht precies één {cell.name}, gevonden {len(found)}")
        return int(found[0][0]), int(found[0][1])

    @property
    def start(self) -> Tuple[int, int]:
        return self._find(Cell.START)

    @property
    def goal(self) -> Tuple[int, int]:
        return self._find(Cell.GOAL)

    def is_open(self, row: int, col: int) -> bool:
        return 0 <= row < self.side and 0 <= col < self.side and self.cells[row, col] != Cell.WALL

    def open_cells(self) -> List[Tuple[int, int]]:
        return [(int(r), int(c)) for r, c in np.argwhere(self.cells != Cell.WALL)]

    def to_string(self) -> str:
        """Rij-voor-rij tekens: '#' muur, '.' pad, 'S' start, 'G' doel."""
        return "".join(_CELL_CHARS[Cell(v)] for v in self.cells.reshape(-1))

    @classmethod
    def from_string(cls, side: int, text: str, seed: Optional[int] = None) -> "MazeGrid":
        if len(text) != side * side:
            raise InvalidMazeError(f"Celtekst heeft lengte {len(text)}, verwacht {side * side}")
        try:
            values = [int(_CHAR_TO_CELL[ch]) for ch in text]
        except KeyError as exc:
            raise InvalidMazeError(f"Onbekend celteken {exc}")
        return cls(np.array(values, dtype=np.int8).reshape(side, side), seed)

    @classmethod
    def from_rows(cls, rows: Sequence[str], seed: Optional[int] = None) -> "MazeGrid":
        return cls.from_string(len(rows), "".join(rows), seed)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MazeGrid) and np.array_equal(self.cells, other.cells)

    def __hash__(self) -> int:
        return hash(self.to_string())


def _check_side(side: int) -> int:
    if int(side) != side or side < MIN_SIDE or side % 2 == 0:
        raise InvalidMazeError(f"Zijde moet een oneven geheel getal >= {MIN_SIDE} zijn, kreeg {side!r}")
    return int(side)


_CARVE_DIRECTIONS = ((-2, 0), (2, 0), (0, -2), (0, 2))


def _bfs_distances(cells: np.ndarray, origin: Tuple[int, int]) -> Dict[Tuple[int, int], int]:
    side = cells.shape[0]
    distance = {origin: 0}
    queue = deque([origin])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVES.values():
            nr, nc = r + dr, c + dc
            if 0 <= nr < side and 0 <= nc < side and cells[nr, nc] != Cell.WALL and (nr, nc) not in distance:
                distance[(nr, nc)] = distance[(r, c)] + 1
                queue.append((nr, nc))
    return distance


def generate_maze(side: int, seed: int) -> MazeGrid:
    """Perfect doolhof met gerandomiseerde Prim op de oneven coördinaten.

    START ligt op (1, 1); GOAL op de open cel met maximale boomafstand tot START,
    bij gelijke afstand de eerste in rij-volgorde.
    """
    side = _check_side(side)
    rng = np.random.default_rng(seed)
    cells = np.full((side, side), Cell.WALL, dtype=np.int8)
    start = (1, 1)
    cells[start] = Cell.PATH
    in_maze: Set[Tuple[int, int]] = {start}
    frontier: List[Tuple[int, int]] = []
    queued: Set[Tuple[int, int]] = set()

    def _add_frontier(cell: Tuple[int, int]) -> None:
        r, c = cell
        for dr, dc in _CARVE_DIRECTIONS:
            nxt = (r + dr, c + dc)
            if 1 <= nxt[0] <= side - 2 and 1 <= nxt[1] <= side - 2 and nxt not in in_maze and nxt not in queued:
                frontier.append(nxt)
                queued.add(nxt)

    _add_frontier(start)
    while frontier:
        cell = frontier.pop(int(rng.integers(len(frontier))))
        r, c = cell
        neighbours = [
            (r + dr, c + dc) for dr, dc in _CARVE_DIRECTIONS if (r + dr, c + dc) in in_maze
        ]
        nr, nc = neighbours[int(rng.integers(len(neighbours)))]
        cells[(r + nr) // 2, (c + nc) // 2] = Cell.PATH
        cells[r, c] = Cell.PATH
        in_maze.add(cell)
        _add_frontier(cell)

    distance = _bfs_distances(cells, start)
    goal, best = start, -1
    for pos in sorted(distance):
        if distance[pos] > best:
            goal, best = pos, distance[pos]
    cells[start] = Cell.START
    cells[goal] = Cell.GOAL
    return MazeGrid(cells, seed)


def check_perfect_maze(grid: MazeGrid) -> None:
    """Gooi InvalidMazeError tenzij het grid een geldig perfect doolhof is."""
    cells = grid.cells
    side = grid.side
    if cells.shape != (side, side):
        raise InvalidMazeError(f"Grid is niet vierkant: {cells.shape}")
    border = np.concatenate([cells[0], cells[-1], cells[:, 0], cells[:, -1]])
    if np.any(border != Cell.WALL):
        raise InvalidMazeError("De buitenrand moet volledig uit muren bestaan")
    start = grid.start
    goal = grid.goal
    open_cells = grid.open_cells()
    edges = 0
    for r, c in open_cells:
        if grid.is_open(r + 1, c):
            edges += 1
        if grid.is_open(r, c + 1):
            edges += 1
    if edges != len(open_cells) - 1:
        raise InvalidMazeError(f"{edges} open verbindingen bij {len(open_cells)} open cellen: geen boom")
    reachable = _bfs_distances(cells, start)
    if goal not in reachable:
        raise InvalidMazeError("GOAL is niet bereikbaar vanaf START")
    if len(reachable) != len(open_cells):
        raise InvalidMazeError("Niet alle open cellen zijn bereikbaar vanaf START")


def is_perfect_maze(grid: MazeGrid) -> bool:
    try:
        check_perfect_maze(grid)
    except InvalidMazeError:
        return False
    return True


def tokenize_maze(grid: MazeGrid) -> List[int]:
    """BOS GRID_START <rij> NEWLINE ... GRID_END PATH_START."""
    tokens = [int(Token.BOS), int(Token.GRID_START)]
    for row in grid.cells:
        tokens.extend(int(_CELL_TO_TOKEN[Cell(v)]) for v in row)
        tokens.append(int(Token.NEWLINE))
    tokens.extend([int(Token.GRID_END), int(Token.PATH_START)])
    return tokens


def prompt_length(side: int) -> int:
    return side * side + side + 4


def max_generation_length(side: int) -> int:
    return 4 * side * side


def detokenize(tokens: Sequence[int]) -> MazeGrid:
    """Inverse van tokenize_maze."""
    tokens = [int(t) for t in tokens]
    if len(tokens) < 4 or tokens[:2] != [Token.BOS, Token.GRID_START] or tokens[-2:] != [Token.GRID_END, Token.PATH_START]:
        raise InvalidMazeError("Tokenreeks heeft niet de vorm BOS GRID_START ... GRID_END PATH_START")
    body = tokens[2:-2]
    rows: List[List[int]] = []
    current: List[int] = []
    for tok in body:
        if tok == Token.NEWLINE:
            rows.append(current)
            current = []
        elif tok in _TOKEN_TO_CELL:
            current.append(int(_TOKEN_TO_CELL[tok]))
        else:
            raise InvalidMazeError(f"Onverwacht token {VOCAB.get(tok, tok)} in grid")
    if current:
        raise InvalidMazeError("Laatste rij mist een NEWLINE")
    side = len(rows)
    if side == 0 or any(len(row) != side for row in rows):
        raise InvalidMazeError("Rijen hebben ongelijke lengte of het grid is niet vierkant")
    return MazeGrid(np.array(rows, dtype=np.int8))


def tokens_to_string(tokens: Iterable[int]) -> str:
    return " ".join(VOCAB[int(t)] for t in tokens)


def string_to_tokens(text: str) -> List[int]:
    try:
        return [NAME_TO_ID[name] for name in text.split()]
    except KeyError as exc:
        raise InvalidMazeError(f"Onbekend token {exc}")


@dataclass(frozen=True)
class PathCheck:
    reward: int
    malformed: bool
    reason: str
    position: Tuple[int, int]


def check_path(grid: MazeGrid, actions: Sequence[int]) -> PathCheck:
    """Loop de acties af vanaf START en beoordeel het resultaat."""
    pos = grid.start
    goal = grid.goal
    actions = [int(a) for a in actions]
    for idx, action in enumerate(actions):
        if action in MOVES:
            dr, dc = MOVES[action]
            nxt = (pos[0] + dr, pos[1] + dc)
            if not grid.is_open(*nxt):
                return PathCheck(0, False, "muur", pos)
            pos = nxt
        elif action == Token.DONE:
            trailing = actions[idx + 1:]
            if any(t not in (Token.EOS, Token.PAD) for t in trailing):
                return PathCheck(0, True, "tokens na DONE", pos)
            if pos == goal:
                return PathCheck(1, False, "opgelost", pos)
            return PathCheck(0, False, "niet op doel", pos)
        elif action == Token.EOS:
            return PathCheck(0, False, "geen DONE", pos)
        else:
            return PathCheck(0, True, f"onbekend token {VOCAB.get(action, action)}", pos)
    return PathCheck(0, False, "geen DONE", pos)


def verify_path(grid: MazeGrid, actions: Sequence[int]) -> int:
    """1 als de acties zonder muur of rand op GOAL eindigen en met DONE afsluiten, anders 0."""
    return check_path(grid, actions).reward


def ground_truth_actions(grid: MazeGrid) -> List[int]:
    """Kortste pad START -> GOAL als actietokens, afgesloten met DONE."""
    start, goal = grid.start, grid.goal
    prev: Dict[Tuple[int, int], Tuple[Tuple[int, int], int]] = {}
    seen = {start}
    queue = deque([start])
    while queue:
        pos = queue.popleft()
        if pos == goal:
            break
        for action, (dr, dc) in MOVES.items():
            nxt = (pos[0] + dr, pos[1] + dc)
            if grid.is_open(*nxt) and nxt not in seen:
                seen.add(nxt)
                prev[nxt] = (pos, int(action))
                queue.append(nxt)
    if goal not in seen:
        raise InvalidMazeError("GOAL is niet bereikbaar vanaf START")
    actions: List[int] = []
    at = goal
    while at != start:
        at, action = prev[at]
        actions.append(action)
    actions.reverse()
    return actions + [int(Token.DONE)]


def generate_mazes(side: int, count: int, seed: int) -> List[MazeGrid]:
    """count doolhoven; doolhof i gebruikt een seed afgeleid van (seed, i)."""
    return [generate_maze(side, derive_maze_seed(seed, STREAM_TRAIN, i)) for i in range(count)]


def derive_maze_seed(seed: int, *keys: int) -> int:
    return int(rng_stream(seed, *keys).integers(2 ** 31 - 1))


class MazeTaskSource:
    """Trainings- en heldout-doolhoven uit gescheiden seed-naamruimtes.

    Trainingsdoolhoven die toevallig gelijk zijn aan een heldout-doolhof worden overgeslagen.
    """

    def __init__(self, side: int, seed: int, heldout_size: int, dataset: Optional[List[MazeGrid]] = None):
        self.side = _check_side(side)
        self.seed = seed
        self.heldout = [
            generate_maze(self.side, derive_maze_seed(seed, STREAM_HELDOUT, i)) for i in range(heldout_size)
        ]
        self._heldout_keys = {g.to_string() for g in self.heldout}
        self.dataset = dataset

    def _fresh(self, stream: int, *keys: int) -> MazeGrid:
        attempt = 0
        while True:
            grid = generate_maze(self.side, derive_maze_seed(self.seed, stream, *keys, attempt))
            if grid.to_string() not in self._heldout_keys:
                return grid
            attempt += 1
            get_logger().debug("Trainingsdoolhof gelijk aan heldout, opnieuw (poging %d)", attempt)

    def batch(self, step: int, size: int, stream: int = STREAM_TRAIN) -> List[MazeGrid]:
        """Verse doolhoven voor een stap (oneindige-data regime; SFT gebruikt een eigen stream)."""
        return [self._fresh(stream, step, i) for i in range(size)]

    def fixed_dataset(self, size: int) -> List[MazeGrid]:
        """Bevroren trainingsset: uit het datasetbestand of gegenereerd uit de seed."""
        if self.dataset is not None:
            if len(self.dataset) < size:
                raise InvalidMazeError(f"Dataset bevat {len(self.dataset)} doolhoven, nodig {size}")
            for grid in self.dataset[:size]:
                if grid.side != self.side:
                    raise InvalidMazeError(f"Dataset-doolhof met zijde {grid.side}, verwacht {self.side}")
            return list(self.dataset[:size])
        return [self._fresh(_FIXED_DATASET_STREAM, i) for i in range(size)]
