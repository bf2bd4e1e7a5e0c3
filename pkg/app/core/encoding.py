"""
Textual encodings of topologies, prompt templating and word-level tokenization.

Two grammars (single-space token separation):

Array mode, one clause per device in pool order, then one tie clause per
external terminal that does not name its own net:
    C0 IN n1 ; L0 n1 OUT ; Sa0 0 n2 ; ... ; OUT IN

NL incident mode, one sentence per net holding a device port (or at least two
external terminals), in net-name order IN, OUT, 0, n1, n2, ...:
    Net IN connects C0 port 1 and Sa0 port 1 . Net n3 connects L0 port 2 .
"""

from enum import Enum
from typing import Iterable, Sequence

from app.core.circuit import (
    EXTERNAL_NAMES,
    N_DEVICES,
    N_PORTS,
    ComponentPool,
    Topology,
    device_port,
    port_owner,
    topology_from_groups,
)
from app.core.errors import ParseError, ParseErrorKind, SequenceTooLong, UnknownToken

MAX_LEN = 96

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
SEP = "<sep>"

PROMPT_WORDS = ("Generate", "a", "circuit", "topology", "using", "the", "following", "components")
TEMPLATE_WORDS = ("Net", "connects", "and") + PROMPT_WORDS + (":", ",", ".")
INTERNAL_NET_NAMES = tuple(f"n{i}" for i in range(1, 12))
NET_NAMES = ("IN", "OUT", "0") + INTERNAL_NET_NAMES


class EncodingMode(str, Enum):
    NL_INCIDENT = "nl"
    ARRAY = "array"


class Vocabulary:
    """Closed token set with a token <-> id bijection; PAD has id 0."""

    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        if tokens[0] != PAD:
            raise ValueError("PAD must have id 0")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def default(cls) -> "Vocabulary":
        devices = [f"{kind}{i}" for kind in ("C", "L", "Sa", "Sb") for i in range(N_DEVICES)]
        tokens = [PAD, BOS, EOS, SEP, *devices, "port", "1", "2", *NET_NAMES, *TEMPLATE_WORDS, ";"]
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise UnknownToken(token) from None

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def sep_id(self) -> int:
        return self._ids[SEP]


VOCAB = Vocabulary.default()


# ==================== Tokenization ====================


def tokenize(text: str, vocab: Vocabulary = VOCAB) -> list[int]:
    """Word-level ids wrapped as BOS ... EOS."""
    ids = [vocab.bos_id]
    if text:
        ids.extend(vocab.id(tok) for tok in text.split(" "))
    ids.append(vocab.eos_id)
    return ids


def detokenize(ids: Iterable[int], vocab: Vocabulary = VOCAB) -> str:
    skip = {vocab.pad_id, vocab.bos_id, vocab.eos_id}
    return " ".join(vocab.token(i) for i in ids if i not in skip)


# ==================== Prompts ====================


def encode_prompt(pool: ComponentPool) -> str:
    parts = " , ".join(pool.instance_names)
    return f"Generate a circuit topology using the following components : {parts} ."


def prompt_ids(pool: ComponentPool, vocab: Vocabulary = VOCAB) -> list[int]:
    """BOS + prompt + SEP; the model continues with the netlist after SEP."""
    return tokenize(encode_prompt(pool), vocab)[:-1] + [vocab.sep_id]


def lm_example(pool: ComponentPool, netlist: str, vocab: Vocabulary = VOCAB,
               max_len: int = MAX_LEN) -> tuple[list[int], int]:
    """Training sequence BOS prompt SEP netlist EOS and the index of SEP."""
    prefix = prompt_ids(pool, vocab)
    ids = prefix + tokenize(netlist, vocab)[1:]
    if len(ids) > max_len:
        raise SequenceTooLong(f"sequence of {len(ids)} tokens exceeds {max_len}")
    return ids, len(prefix) - 1


def classifier_ids(netlist: str, vocab: Vocabulary = VOCAB) -> list[int]:
    """Topology portion only: netlist tokens followed by EOS."""
    return tokenize(netlist, vocab)[1:]


# ==================== Encoding ====================


def net_names(t: Topology) -> dict[int, str]:
    """Representative -> net name; internal nets numbered by first use over device ports."""
    names: dict[int, str] = {}
    for rep in t.nets:
        if rep < 3:
            names[rep] = EXTERNAL_NAMES[rep]
    counter = 1
    for device in range(N_DEVICES):
        for pin in (1, 2):
            rep = t.net_of[device_port(device, pin)]
            if rep not in names:
                names[rep] = f"n{counter}"
                counter += 1
    return names


def _name_order(name: str) -> int:
    return NET_NAMES.index(name)


def encode_topology(t: Topology, mode: EncodingMode) -> str:
    mode = EncodingMode(mode)
    names = net_names(t)
    if mode is EncodingMode.ARRAY:
        clauses = []
        for device, instance in enumerate(t.pool.instance_names):
            a, b = t.device_nets(device)
            clauses.append(f"{instance} {names[a]} {names[b]}")
        for port in range(3):
            rep = t.net_of[port]
            if rep != port:
                clauses.append(f"{EXTERNAL_NAMES[port]} {names[rep]}")
        return " ; ".join(clauses)

    sentences = []
    for rep, members in t.nets.items():
        externals = [EXTERNAL_NAMES[p] for p in members if p < 3 and p != rep]
        devices = [p for p in members if p >= 3]
        if not devices and not externals:
            continue
        parts = list(externals)
        for port in devices:
            device, pin = port_owner(port)
            parts.append(f"{t.pool.instance_names[device]} port {pin}")
        sentences.append((names[rep], f"Net {names[rep]} connects " + " and ".join(parts) + " ."))
    sentences.sort(key=lambda item: _name_order(item[0]))
    return " ".join(sentence for _, sentence in sentences)


# ==================== Parsing ====================


class _NetBuilder:
    """Union-find over net labels; external terminals start in the net named after them."""

    def __init__(self, pool: ComponentPool):
        self.pool = pool
        self._parent: dict[str, str] = {}
        self.port_label: dict[int, str] = {}
        for port, name in enumerate(EXTERNAL_NAMES):
            self.port_label[port] = name
            self._parent[name] = name

    def _find(self, label: str) -> str:
        self._parent.setdefault(label, label)
        while self._parent[label] != label:
            self._parent[label] = self._parent[self._parent[label]]
            label = self._parent[label]
        return label

    def union(self, a: str, b: str) -> None:
        ra, rb = self._find(a), self._find(b)
        if ra != rb:
            self._parent[rb] = ra

    def assign(self, port: int, label: str) -> None:
        self._find(label)
        self.port_label[port] = label

    def check_complete(self) -> None:
        for device, instance in enumerate(self.pool.instance_names):
            for pin in (1, 2):
                if device_port(device, pin) not in self.port_label:
                    raise ParseError(ParseErrorKind.MISSING_DEVICE,
                                     f"{instance} port {pin} is not connected")

    def build(self) -> Topology:
        groups: dict[str, list[int]] = {}
        for port in range(N_PORTS):
            groups.setdefault(self._find(self.port_label[port]), []).append(port)
        return topology_from_groups(self.pool, groups.values())


def _check_tokens(tokens: Sequence[str], clause: str, vocab: Vocabulary) -> None:
    for tok in tokens:
        if tok not in vocab:
            raise UnknownToken(tok, clause)


def _device(pool: ComponentPool, token: str, clause: str) -> int:
    try:
        return pool.device_index(token)
    except KeyError:
        if token[:1] in ("C", "L", "S") and token in VOCAB:
            raise ParseError(ParseErrorKind.MISSING_DEVICE, f"{token} is not in the component pool", clause)
        raise ParseError(ParseErrorKind.UNEXPECTED_TOKEN, f"expected a device, got {token!r}", clause)


def _net_name(token: str, clause: str) -> str:
    if token not in NET_NAMES:
        raise ParseError(ParseErrorKind.BAD_NET_NAME, f"{token!r} is not a net name", clause)
    return token


def _parse_array(tokens: list[str], pool: ComponentPool) -> Topology:
    builder = _NetBuilder(pool)
    seen_devices: set[int] = set()
    tied: set[str] = set()
    clauses: list[list[str]] = [[]]
    for tok in tokens:
        if tok == ";":
            clauses.append([])
        else:
            clauses[-1].append(tok)

    for words in clauses:
        clause = " ".join(words)
        if not words:
            raise ParseError(ParseErrorKind.TRUNCATED, "empty clause", clause)
        head = words[0]
        if head in EXTERNAL_NAMES:
            if len(words) < 2:
                raise ParseError(ParseErrorKind.TRUNCATED, "tie clause ends early", clause)
            if len(words) > 2:
                raise ParseError(ParseErrorKind.UNEXPECTED_TOKEN, "tie clause takes one net name", clause)
            target = _net_name(words[1], clause)
            if target == head or head in tied:
                raise ParseError(ParseErrorKind.BAD_NET_NAME, f"terminal {head} tied twice or to itself", clause)
            tied.add(head)
            builder.union(target, head)
            continue
        device = _device(pool, head, clause)
        if device in seen_devices:
            raise ParseError(ParseErrorKind.DUPLICATE_DEVICE, f"{head} listed twice", clause)
        if len(words) < 3:
            raise ParseError(ParseErrorKind.TRUNCATED, "device clause ends early", clause)
        if len(words) > 3:
            raise ParseError(ParseErrorKind.UNEXPECTED_TOKEN, "device clause takes two net names", clause)
        seen_devices.add(device)
        builder.assign(device_port(device, 1), _net_name(words[1], clause))
        builder.assign(device_port(device, 2), _net_name(words[2], clause))

    builder.check_complete()
    return builder.build()


def _parse_nl(tokens: list[str], pool: ComponentPool) -> Topology:
    builder = _NetBuilder(pool)
    named: set[str] = set()
    mentioned_ports: set[int] = set()
    mentioned_externals: set[str] = set()
    pos = 0
    n = len(tokens)

    def clause_text(start: int) -> str:
        return " ".join(tokens[start:pos + 1])

    def expect(start: int, *allowed: str) -> str:
        nonlocal pos
        if pos >= n:
            raise ParseError(ParseErrorKind.TRUNCATED, "sentence ends early", " ".join(tokens[start:]))
        tok = tokens[pos]
        if allowed and tok not in allowed:
            raise ParseError(ParseErrorKind.UNEXPECTED_TOKEN,
                             f"expected {' or '.join(allowed)}, got {tok!r}", clause_text(start))
        pos += 1
        return tok

    if not tokens:
        raise ParseError(ParseErrorKind.TRUNCATED, "empty netlist")

    while pos < n:
        start = pos
        expect(start, "Net")
        name = _net_name(expect(start), clause_text(start))
        if name in named:
            raise ParseError(ParseErrorKind.BAD_NET_NAME, f"net {name} described twice", clause_text(start))
        named.add(name)
        expect(start, "connects")
        while True:
            member = expect(start)
            if member in EXTERNAL_NAMES:
                if member == name or member in mentioned_externals:
                    raise ParseError(ParseErrorKind.DUPLICATE_DEVICE,
                                     f"terminal {member} listed twice", clause_text(start))
                mentioned_externals.add(member)
                builder.union(name, member)
            else:
                device = _device(pool, member, clause_text(start))
                expect(start, "port")
                pin = int(expect(start, "1", "2"))
                port = device_port(device, pin)
                if port in mentioned_ports:
                    raise ParseError(ParseErrorKind.DUPLICATE_DEVICE,
                                     f"{member} port {pin} listed twice", clause_text(start))
                mentioned_ports.add(port)
                builder.assign(port, name)
            sep = expect(start, "and", ".")
            if sep == ".":
                break

    builder.check_complete()
    return builder.build()


def parse_topology(text: str, pool: ComponentPool, mode: EncodingMode, vocab: Vocabulary = VOCAB) -> Topology:
    """Inverse of encode_topology; accepts exactly the grammar, any internal net naming."""
    tokens = text.split(" ") if text else []
    _check_tokens(tokens, text, vocab)
    if EncodingMode(mode) is EncodingMode.ARRAY:
        return _parse_array(tokens, pool)
    return _parse_nl(tokens, pool)


def reencode(text: str, pool: ComponentPool, source: EncodingMode, target: EncodingMode) -> str:
    return encode_topology(parse_topology(text, pool, source), target)
