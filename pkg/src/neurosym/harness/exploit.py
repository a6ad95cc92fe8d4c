"""A small HTTP request rewriter with a 100-byte message buffer.

``GET <uri> <version>\\n`` is rewritten to ``<uri>,<version>\\0``. The
version must be at least 8 characters with ``'1'`` at index 5; the copy
loop never checks the buffer bound, so long fields write past the end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..lang import VarDecl

MSGBUF_SIZE = 100
URI_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789/._-"
VERSION_TEMPLATE = "HTTP/1.1"
MAX_FIELD = 128


@dataclass
class ParseOutcome:
    accepted: bool
    reason: str = ""
    uri: str = ""
    version: str = ""
    ptr: int = -1
    max_index: int = -1
    overflow: bool = False


def process_request(request: str) -> ParseOutcome:
    if not request.startswith("GET "):
        return ParseOutcome(False, "not a GET request")
    rest = request[4:]
    sp = rest.find(" ")
    if sp < 0:
        return ParseOutcome(False, "missing version field")
    uri, rest = rest[:sp], rest[sp + 1:]
    nl = rest.find("\n")
    if nl < 0:
        return ParseOutcome(False, "unterminated request line")
    version = rest[:nl]
    if len(version) < 8 or version[5] != "1":
        return ParseOutcome(False, "Unsupported protocol version", uri, version)

    msgbuf = [""] * MSGBUF_SIZE
    overflow = False
    max_index = -1

    def write(i: int, ch: str) -> None:
        nonlocal overflow, max_index
        max_index = max(max_index, i)
        if i >= MSGBUF_SIZE:
            overflow = True
        else:
            msgbuf[i] = ch

    ptr = 0
    for ch in uri:
        write(ptr, ch)
        ptr += 1
    write(ptr, ",")
    ptr += 1
    for ch in version:
        write(ptr, ch)
        ptr += 1
    write(ptr, "\0")
    return ParseOutcome(True, "", uri, version, ptr, max_index, overflow)


def format_version(length: int, filler: str = "a") -> str:
    """A version field of ``length`` characters that passes the format check."""
    if length <= len(VERSION_TEMPLATE):
        return VERSION_TEMPLATE[:length]
    return VERSION_TEMPLATE + filler * (length - len(VERSION_TEMPLATE))


def build_request(uri: str, version: str) -> str:
    return f"GET {uri} {version}\n"


class HttpProgram:
    """Black-box view: one observation at the final buffer write."""

    name = "http"
    state = ("uri_length", "ver_length", "ptr")
    state_kinds = ("int", "int", "int")
    guard_ast = None

    def __init__(self, max_field: int = MAX_FIELD):
        self.max_field = max_field
        self.inputs = (VarDecl("request", "str", maxlen=2 * max_field + 6),)

    def kinds(self) -> dict[str, str]:
        return {"request": "str", **dict(zip(self.state, self.state_kinds))}

    def draw(self, rng: np.random.Generator) -> dict[str, str]:
        u = int(rng.integers(0, self.max_field + 1))
        v = int(rng.integers(0, self.max_field + 1))
        uri = "".join(rng.choice(list(URI_ALPHABET), size=u))
        if rng.random() < 0.9:
            version = format_version(v, "0")
        else:
            version = ("HTTP/2.0" + "0" * v)[:v]
        return {"request": build_request(uri, version)}

    def run(self, inputs: Mapping[str, str]) -> list[tuple[int, dict[str, int]]]:
        out = process_request(inputs["request"])
        if not out.accepted:
            return []
        return [(0, {"uri_length": len(out.uri), "ver_length": len(out.version), "ptr": out.ptr})]


def http_program() -> HttpProgram:
    return HttpProgram()


EXPLOIT_CONSTRAINTS = """\
# field contents and their lengths
str input_uri maxlen {maxlen};
str input_version maxlen {maxlen};
int uri_length in 0..{maxlen};
int ver_length in 8..{maxlen};
int ptr in 0..{ptr_max};
assert uri_length == strlen(input_uri);
assert ver_length == strlen(input_version);
assert ptr > 99;
neural "{model}" (uri_length, ver_length) -> (ptr);
"""


def exploit_constraints(model_path: str, maxlen: int = MAX_FIELD) -> str:
    return EXPLOIT_CONSTRAINTS.format(maxlen=maxlen, ptr_max=2 * maxlen + 2, model=model_path)


def request_from_assignment(a: Mapping[str, object]) -> str:
    """Concrete request from solved fields; version content follows the format."""
    uri = str(a["input_uri"])
    if any(ch in uri for ch in " \n"):
        uri = "a" * len(uri)
    version = format_version(len(str(a["input_version"])))
    return build_request(uri, version)
