"""JSON tree dumps of processes and participants (the machine-readable
form written next to the pretty-printed monitor text)."""

from __future__ import annotations

from .calculus import (
    Bind,
    Const,
    Ctor,
    CtorPat,
    Eq,
    Event,
    Get,
    If,
    In,
    Insert,
    Let,
    Name,
    New,
    Nil,
    Out,
    Par,
    Participant,
    Pattern,
    Process,
    Repl,
    Term,
    Tuple,
    TuplePat,
    Var,
)


def term_to_json(t: Term) -> object:
    match t:
        case Name(ident):
            return {"name": ident}
        case Var(ident):
            return {"var": ident}
        case Const(symbol):
            return {"const": symbol}
        case Ctor(symbol, args):
            return {"ctor": symbol, "args": [term_to_json(a) for a in args]}
        case Tuple(items):
            return {"tuple": [term_to_json(a) for a in items]}
    raise TypeError(t)


def term_from_json(data: object) -> Term:
    assert isinstance(data, dict)
    if "name" in data:
        return Name(data["name"])
    if "var" in data:
        return Var(data["var"])
    if "const" in data:
        return Const(data["const"])
    if "ctor" in data:
        return Ctor(data["ctor"], tuple(term_from_json(a) for a in data["args"]))
    if "tuple" in data:
        return Tuple(tuple(term_from_json(a) for a in data["tuple"]))
    raise ValueError(f"bad term json: {data}")


def pattern_to_json(p: Pattern) -> object:
    match p:
        case Bind(ident, ty):
            return {"bind": ident, "type": ty}
        case Eq(t):
            return {"eq": term_to_json(t)}
        case CtorPat(symbol, args):
            return {"ctorpat": symbol, "args": [pattern_to_json(a) for a in args]}
        case TuplePat(items):
            return {"tuplepat": [pattern_to_json(a) for a in items]}
    raise TypeError(p)


def pattern_from_json(data: object) -> Pattern:
    assert isinstance(data, dict)
    if "bind" in data:
        return Bind(data["bind"], data.get("type"))
    if "eq" in data:
        return Eq(term_from_json(data["eq"]))
    if "ctorpat" in data:
        return CtorPat(data["ctorpat"], tuple(pattern_from_json(a) for a in data["args"]))
    if "tuplepat" in data:
        return TuplePat(tuple(pattern_from_json(a) for a in data["tuplepat"]))
    raise ValueError(f"bad pattern json: {data}")


def process_to_json(p: Process) -> object:
    match p:
        case Nil():
            return {"nil": True}
        case Par(l, r):
            return {"par": [process_to_json(l), process_to_json(r)]}
        case Repl(b):
            return {"repl": process_to_json(b)}
        case New(x, ty, b):
            return {"new": x, "type": ty, "body": process_to_json(b)}
        case In(c, pat, b):
            return {
                "in": term_to_json(c),
                "pattern": pattern_to_json(pat),
                "body": process_to_json(b),
            }
        case Out(c, m, b):
            return {
                "out": term_to_json(c),
                "message": term_to_json(m),
                "body": process_to_json(b),
            }
        case Let(pat, val, then, orelse):
            return {
                "let": pattern_to_json(pat),
                "value": term_to_json(val),
                "then": process_to_json(then),
                "else": None if orelse is None else process_to_json(orelse),
            }
        case Insert(tab, args, b):
            return {
                "insert": tab,
                "args": [term_to_json(a) for a in args],
                "body": process_to_json(b),
            }
        case Get(tab, pats, then, orelse):
            return {
                "get": tab,
                "patterns": [pattern_to_json(a) for a in pats],
                "then": process_to_json(then),
                "else": None if orelse is None else process_to_json(orelse),
            }
        case Event(sym, args, b):
            return {
                "event": sym,
                "args": [term_to_json(a) for a in args],
                "body": process_to_json(b),
            }
        case If(l, r, then, orelse):
            return {
                "if": term_to_json(l),
                "equals": term_to_json(r),
                "then": process_to_json(then),
                "else": None if orelse is None else process_to_json(orelse),
            }
    raise TypeError(p)


def process_from_json(data: object) -> Process:
    assert isinstance(data, dict)
    if "nil" in data:
        return Nil()
    if "par" in data:
        return Par(process_from_json(data["par"][0]), process_from_json(data["par"][1]))
    if "repl" in data:
        return Repl(process_from_json(data["repl"]))
    if "new" in data:
        return New(data["new"], data["type"], process_from_json(data["body"]))
    if "in" in data:
        return In(
            term_from_json(data["in"]),
            pattern_from_json(data["pattern"]),
            process_from_json(data["body"]),
        )
    if "out" in data:
        return Out(
            term_from_json(data["out"]),
            term_from_json(data["message"]),
            process_from_json(data["body"]),
        )
    if "let" in data:
        return Let(
            pattern_from_json(data["let"]),
            term_from_json(data["value"]),
            process_from_json(data["then"]),
            None if data["else"] is None else process_from_json(data["else"]),
        )
    if "insert" in data:
        return Insert(
            data["insert"],
            tuple(term_from_json(a) for a in data["args"]),
            process_from_json(data["body"]),
        )
    if "get" in data:
        return Get(
            data["get"],
            tuple(pattern_from_json(a) for a in data["patterns"]),
            process_from_json(data["then"]),
            None if data["else"] is None else process_from_json(data["else"]),
        )
    if "event" in data:
        return Event(
            data["event"],
            tuple(term_from_json(a) for a in data["args"]),
            process_from_json(data["body"]),
        )
    if "if" in data:
        return If(
            term_from_json(data["if"]),
            term_from_json(data["equals"]),
            process_from_json(data["then"]),
            None if data["else"] is None else process_from_json(data["else"]),
        )
    raise ValueError(f"bad process json: {data}")


def participant_to_json(part: Participant) -> dict:
    return {
        "name": part.name,
        "params": [list(p) for p in part.params],
        "role": part.role,
        "body": process_to_json(part.body),
    }


def participant_from_json(data: dict) -> Participant:
    return Participant(
        name=data["name"],
        params=tuple((n, t) for n, t in data["params"]),
        body=process_from_json(data["body"]),
        role=data.get("role"),
    )
