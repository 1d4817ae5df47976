"""
Pulse-sequence language: tokenizer, parser and canonical pretty-printer.

    # comment
    sweep tau 0us:4us:200
    laser 3us
    wait 1us
    mw pi/2 @ 2.873GHz amp 25MHz phase 0
    wait $tau
    mw pi/2 @ 2.873GHz amp 25MHz
    readout 300ns
    repeat 3 { wait 1us; laser 1us }

Statements end at a newline, `;` or a closing brace. Quantities carry a unit
(ns, us, µs, ms, s | Hz, kHz, MHz, GHz | dBm); phases are bare radians.
Any numeric slot accepts `$var` bound by a `sweep` declaration.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Dict, List, Optional, Tuple, Union

from nvsim.errors import SequenceSyntaxError

TIME, FREQUENCY, POWER, PHASE = "time", "frequency", "power", "phase"

UNITS: Dict[str, Tuple[str, Decimal]] = {
    "ns": (TIME, Decimal("1e-9")),
    "us": (TIME, Decimal("1e-6")),
    "µs": (TIME, Decimal("1e-6")),
    "ms": (TIME, Decimal("1e-3")),
    "s": (TIME, Decimal("1")),
    "Hz": (FREQUENCY, Decimal("1")),
    "kHz": (FREQUENCY, Decimal("1e3")),
    "MHz": (FREQUENCY, Decimal("1e6")),
    "GHz": (FREQUENCY, Decimal("1e9")),
    "dBm": (POWER, Decimal("1")),
    "rad": (PHASE, Decimal("1")),
}
CANONICAL_UNIT = {TIME: "s", FREQUENCY: "Hz", POWER: "dBm", PHASE: ""}

ROLES = ("pi", "pi/2")
CHANNELS = ("laser", "wait", "mw", "readout")

_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(.*)$")
_VAR = re.compile(r"^\$([A-Za-z_][A-Za-z0-9_]*)$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TOKEN = re.compile(r"(?P<comment>#[^\n]*)|(?P<newline>\n)|(?P<space>[ \t\r]+)|(?P<punct>[{};@])|(?P<word>[^\s{};@#]+)")

# ---------- AST ----------


@dataclass(frozen=True)
class Var:
    name: str
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Quantity:
    """A literal in SI units (s, Hz, dBm, rad) or a sweep-variable reference."""

    value: Union[float, Var]
    dimension: str

    @property
    def is_var(self) -> bool:
        return isinstance(self.value, Var)


@dataclass(frozen=True)
class Statement:
    channel: str
    duration: Optional[Quantity] = None
    role: Optional[str] = None
    frequency: Optional[Quantity] = None
    amplitude: Optional[Quantity] = None
    phase: Optional[Quantity] = None
    echo: bool = False
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Repeat:
    count: int
    body: Tuple[Union[Statement, "Repeat"], ...]
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Sweep:
    variable: str
    start: float
    stop: float
    points: int
    dimension: str
    scale: str = "linear"
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def values(self) -> List[float]:
        if self.points == 1:
            return [self.start]
        step = (self.stop - self.start) / (self.points - 1)
        return [self.start + k * step for k in range(self.points - 1)] + [self.stop]


Node = Union[Statement, Repeat]


@dataclass(frozen=True)
class SequenceProgram:
    statements: Tuple[Node, ...]
    sweeps: Tuple[Sweep, ...] = ()
    source: Optional[str] = field(default=None, compare=False)

    def sweep(self, name: str) -> Sweep:
        for s in self.sweeps:
            if s.variable == name:
                return s
        raise KeyError(name)

    def variables(self) -> List[str]:
        return [s.variable for s in self.sweeps]


# ---------- Tokenizer ----------


@dataclass(frozen=True)
class Token:
    kind: str  # word | punct | newline | eof
    text: str
    line: int
    column: int


def tokenize(text: str, source: Optional[str] = None) -> List[Token]:
    tokens: List[Token] = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # pragma: no cover - the word class matches anything else
            raise SequenceSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1, source)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "newline":
            tokens.append(Token("newline", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind in ("punct", "word"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------- Parser ----------


class _Parser:
    def __init__(self, text: str, source: Optional[str]):
        self.source = source
        self.tokens = tokenize(text, source)
        self.pos = 0
        self.sweeps: List[Sweep] = []
        self.used: Dict[str, Var] = {}
        self.uses: List[Tuple[Var, str]] = []

    # token helpers
    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str, tok: Token) -> SequenceSyntaxError:
        return SequenceSyntaxError(message, tok.line, tok.column, self.source)

    def at_end_of_statement(self) -> bool:
        tok = self.peek()
        return tok.kind in ("newline", "eof") or tok.text in (";", "}")

    def skip_separators(self) -> None:
        while self.peek().kind == "newline" or self.peek().text == ";":
            self.next()

    def expect_word(self, what: str) -> Token:
        tok = self.next()
        if tok.kind != "word":
            raise self.error(f"expected {what}, found {tok.text or 'end of input'!r}", tok)
        return tok

    # quantities
    def literal(self, text: str, tok: Token, dimension: str) -> float:
        m = _NUMBER.match(text)
        if m is None:
            raise self.error(f"malformed number {text!r}", tok)
        number, unit = m.group(1), m.group(2)
        if not unit and self.peek().kind == "word" and self.peek().text in UNITS and dimension != PHASE:
            unit = self.next().text
        if not unit:
            if dimension != PHASE:
                raise self.error(f"missing {dimension} unit in {text!r}", tok)
            scale = Decimal(1)
        else:
            if unit not in UNITS:
                raise self.error(f"unknown unit {unit!r}", tok)
            dim, scale = UNITS[unit]
            if dimension == "amplitude":
                if dim not in (FREQUENCY, POWER):
                    raise self.error(f"amplitude needs a frequency or dBm unit, got {unit!r}", tok)
            elif dim != dimension:
                raise self.error(f"expected a {dimension} unit, got {unit!r}", tok)
        try:
            return float(Decimal(number) * scale)
        except InvalidOperation:
            raise self.error(f"malformed number {text!r}", tok)

    def literal_dimension(self, text: str, tok: Token) -> str:
        m = _NUMBER.match(text)
        unit = m.group(2) if m else ""
        if not unit and self.peek().kind == "word" and self.peek().text in UNITS:
            unit = self.peek().text
        if not unit:
            return PHASE
        if unit not in UNITS:
            raise self.error(f"unknown unit {unit!r}", tok)
        return UNITS[unit][0]

    def range_dimension(self, start: str, stop: str, tok: Token) -> str:
        """Dimension of a sweep range: the unit of start, else of stop."""
        for text in (start, stop):
            m = _NUMBER.match(text)
            if m and m.group(2):
                return self.literal_dimension(text, tok)
        return self.literal_dimension(start, tok)

    def endpoint(self, text: str, tok: Token, dimension: str) -> float:
        m = _NUMBER.match(text)
        # a bare zero takes the unit of the other end
        if m and not m.group(2) and dimension != PHASE:
            try:
                if Decimal(m.group(1)) == 0:
                    return 0.0
            except InvalidOperation:
                pass
        return self.literal(text, tok, dimension)

    def quantity(self, dimension: str) -> Quantity:
        tok = self.expect_word(f"a {dimension}")
        vm = _VAR.match(tok.text)
        if vm:
            var = Var(vm.group(1), tok.line, tok.column)
            self.used.setdefault(var.name, var)
            self.uses.append((var, dimension))
            return Quantity(var, dimension)
        value = self.literal(tok.text, tok, dimension)
        if dimension == "amplitude":
            unit_dim = POWER if tok.text.endswith("dBm") or self.tokens[self.pos - 1].text == "dBm" else FREQUENCY
            if unit_dim == FREQUENCY and value < 0:
                raise self.error("negative Rabi amplitude", tok)
            return Quantity(value, unit_dim)
        if dimension == TIME and value < 0:
            raise self.error("negative duration", tok)
        if dimension == FREQUENCY and value < 0:
            raise self.error("negative frequency", tok)
        return Quantity(value, dimension)

    # statements
    def program(self) -> SequenceProgram:
        body = self.block(top=True)
        declared = {s.variable: s for s in self.sweeps}
        for name, var in self.used.items():
            if name not in declared:
                raise SequenceSyntaxError(f"undefined sweep variable ${name}", var.line, var.column, self.source)
        for var, slot in self.uses:
            dim = declared[var.name].dimension
            if dim != slot and not (slot == "amplitude" and dim in (FREQUENCY, POWER)):
                raise SequenceSyntaxError(
                    f"sweep variable ${var.name} holds a {dim} but is used as a {slot}", var.line, var.column, self.source
                )
        for s in self.sweeps:
            if s.variable not in self.used:
                raise SequenceSyntaxError(f"sweep variable {s.variable!r} is never used", s.line, s.column, self.source)
        return SequenceProgram(tuple(body), tuple(self.sweeps), self.source)

    def block(self, top: bool) -> List[Node]:
        nodes: List[Node] = []
        while True:
            self.skip_separators()
            tok = self.peek()
            if tok.kind == "eof":
                if not top:
                    raise self.error("unterminated repeat block, expected '}'", tok)
                return nodes
            if tok.text == "}":
                if top:
                    raise self.error("unexpected '}'", tok)
                self.next()
                return nodes
            node = self.statement(top)
            if node is not None:
                nodes.append(node)
            if not self.at_end_of_statement():
                extra = self.peek()
                raise self.error(f"unexpected {extra.text!r}", extra)

    def statement(self, top: bool) -> Optional[Node]:
        tok = self.expect_word("a statement")
        kw = tok.text
        if kw == "sweep":
            if not top:
                raise self.error("sweep declarations are only allowed at top level", tok)
            self.sweeps.append(self.sweep_decl(tok))
            return None
        if kw == "repeat":
            return self.repeat(tok)
        if kw in ("laser", "readout"):
            return Statement(kw, duration=self.quantity(TIME), line=tok.line, column=tok.column)
        if kw == "wait":
            duration = self.quantity(TIME)
            echo = False
            if self.peek().text == "echo":
                self.next()
                echo = True
            return Statement("wait", duration=duration, echo=echo, line=tok.line, column=tok.column)
        if kw == "mw":
            return self.mw(tok)
        raise self.error(f"unknown statement {kw!r} (expected one of {', '.join(CHANNELS + ('sweep', 'repeat'))})", tok)

    def mw(self, tok: Token) -> Statement:
        role: Optional[str] = None
        duration: Optional[Quantity] = None
        if self.peek().text in ROLES:
            role = self.next().text
        else:
            duration = self.quantity(TIME)
        at = self.next()
        if at.text != "@":
            raise self.error("expected '@ <frequency>' after the mw duration", at)
        frequency = self.quantity(FREQUENCY)
        amplitude = phase = None
        while not self.at_end_of_statement():
            opt = self.expect_word("'amp' or 'phase'")
            if opt.text == "amp" and amplitude is None:
                amplitude = self.quantity("amplitude")
            elif opt.text == "phase" and phase is None:
                phase = self.quantity(PHASE)
            else:
                raise self.error(f"unexpected {opt.text!r} in mw statement", opt)
        return Statement("mw", duration, role, frequency, amplitude, phase, line=tok.line, column=tok.column)

    def repeat(self, tok: Token) -> Repeat:
        count_tok = self.expect_word("a repeat count")
        if not count_tok.text.isdigit() or int(count_tok.text) < 1:
            raise self.error(f"repeat count must be a positive integer, got {count_tok.text!r}", count_tok)
        brace = self.next()
        if brace.text != "{":
            raise self.error("expected '{' after repeat count", brace)
        body = self.block(top=False)
        return Repeat(int(count_tok.text), tuple(body), tok.line, tok.column)

    def sweep_decl(self, tok: Token) -> Sweep:
        name_tok = self.expect_word("a sweep variable name")
        name = name_tok.text.lstrip("$")
        if not _IDENT.match(name):
            raise self.error(f"invalid sweep variable name {name_tok.text!r}", name_tok)
        if any(s.variable == name for s in self.sweeps):
            raise self.error(f"sweep variable {name!r} declared twice", name_tok)
        range_tok = self.expect_word("start:stop:points")
        parts = range_tok.text.split(":")
        if len(parts) != 3:
            raise self.error(f"sweep range must be start:stop:points, got {range_tok.text!r}", range_tok)
        dim = self.range_dimension(parts[0], parts[1], range_tok)
        start = self.endpoint(parts[0], range_tok, dim)
        stop = self.endpoint(parts[1], range_tok, dim)
        if not parts[2].isdigit():
            raise self.error(f"sweep points must be an integer, got {parts[2]!r}", range_tok)
        points = int(parts[2])
        if points < 2:
            raise self.error(f"sweep needs at least 2 points, got {points}", range_tok)
        if dim in (TIME, FREQUENCY) and (start < 0 or stop < 0):
            raise self.error(f"negative {dim} in sweep range", range_tok)
        if self.peek().text == "linear":
            self.next()
        return Sweep(name, start, stop, points, dim, "linear", tok.line, tok.column)


def parse(text: str, source: Optional[str] = None) -> SequenceProgram:
    """Parse sequence source into a SequenceProgram; errors carry line:column."""
    return _Parser(text, source).program()


def parse_file(path: str) -> SequenceProgram:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise SequenceSyntaxError(f"file is not valid UTF-8 (byte {e.start})", 1, 1, path) from e
    return parse(text, source=path)


# ---------- Pretty printer ----------


def format_quantity(q: Quantity) -> str:
    if isinstance(q.value, Var):
        return f"${q.value.name}"
    return f"{float(q.value)!r}{CANONICAL_UNIT[q.dimension]}"


def _format_node(node: Node, indent: str) -> List[str]:
    if isinstance(node, Repeat):
        lines = [f"{indent}repeat {node.count} {{"]
        for child in node.body:
            lines.extend(_format_node(child, indent + "    "))
        return lines + [f"{indent}}}"]
    parts = [node.channel]
    if node.channel == "mw":
        parts.append(node.role if node.role else format_quantity(node.duration))
        parts += ["@", format_quantity(node.frequency)]
        if node.amplitude is not None:
            parts += ["amp", format_quantity(node.amplitude)]
        if node.phase is not None:
            parts += ["phase", format_quantity(node.phase)]
    else:
        parts.append(format_quantity(node.duration))
        if node.echo:
            parts.append("echo")
    return [indent + " ".join(parts)]


def format_program(program: SequenceProgram) -> str:
    """Canonical source (SI units, one statement per line) that parses back to an equal program."""
    lines = [
        f"sweep {s.variable} {s.start!r}{CANONICAL_UNIT[s.dimension]}:{s.stop!r}{CANONICAL_UNIT[s.dimension]}:{s.points}"
        for s in program.sweeps
    ]
    for node in program.statements:
        lines.extend(_format_node(node, ""))
    return "\n".join(lines) + "\n"


# ---------- Single values (command-line arguments) ----------


def parse_quantity(text: str, dimension: str) -> float:
    """'2.87GHz', '40 us', '-3dBm' in SI units; a bare number is already SI."""
    p = _Parser(text.strip(), "<argument>")
    tok = p.expect_word(f"a {dimension}")
    m = _NUMBER.match(tok.text)
    if m is not None and not m.group(2) and p.peek().kind == "eof":
        return float(m.group(1))
    value = p.literal(tok.text, tok, dimension)
    if p.peek().kind != "eof":
        raise p.error(f"unexpected {p.peek().text!r}", p.peek())
    return value


def parse_range(text: str, dimension: str) -> Tuple[float, float, int]:
    """start:stop:points, e.g. '0:10us:200'."""
    parts = text.split(":")
    if len(parts) != 3:
        raise SequenceSyntaxError(f"range must be start:stop:points, got {text!r}", 1, 1, "<argument>")
    if not parts[2].strip().isdigit() or int(parts[2]) < 2:
        raise SequenceSyntaxError(f"range needs an integer point count >= 2, got {parts[2]!r}", 1, 1, "<argument>")
    return parse_quantity(parts[0], dimension), parse_quantity(parts[1], dimension), int(parts[2])
