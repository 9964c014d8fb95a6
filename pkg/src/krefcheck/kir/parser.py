"""Parser for the textual ``.kir`` format.

One statement per line; ``;`` starts a comment. Type definitions may span
lines between their braces. The first error aborts the parse.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

from .ir import (
    BINOPS, CMPOPS, NULL, RECIPES, WRITEONLY, AddrTy, AggRef, Alloca, AsmOp,
    Assert, Assume, BinOp, Block, Br, Call, Cast, Cmp, CondBr, Const,
    EntryDescriptor, Extern, FieldAddr, Global, GlobalVar, IntTy, KirFunction,
    KirModule, KirType, Load, Nondet, Operand, Param, Phi, RcDec, RcDelta,
    RcInc, Ret, Store, Switch, TypeDef, Value, VoidTy, field_path_type,
)


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column_start: int
    column_end: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column_start}"


class ParseError(Exception):
    def __init__(self, span: SourceSpan, expected: str, found: str):
        self.span = span
        self.expected = expected
        self.found = found
        super().__init__(f"{span}: expected {expected}, found {found!r}")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int

    @property
    def end(self) -> int:
        return self.col + max(len(self.text), 1) - 1


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>;[^\n]*)
  | (?P<nl>\n)
  | (?P<arrow>->)
  | (?P<local>%[A-Za-z0-9_.]+)
  | (?P<global>@[A-Za-z0-9_.]+)
  | (?P<label>\^[A-Za-z0-9_.]+)
  | (?P<int>-?[0-9]+)
  | (?P<string>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*(?:-[A-Za-z][A-Za-z0-9_.]*)*)
  | (?P<punct>[{}()\[\],:=<>])
""", re.VERBOSE)


def tokenize(text: str, file: str = "<input>") -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(SourceSpan(file, line, col, col), "a token", text[pos])
        kind = m.lastgroup
        lexeme = m.group()
        if kind == "nl":
            tokens.append(Token("nl", "\\n", line, col))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, lexeme, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def _fits(value: int, ty: KirType) -> bool:
    if not isinstance(ty, IntTy):
        return False
    lo = -(1 << (ty.width - 1)) if ty.width > 1 else -1
    return lo <= value < (1 << ty.width)


_ITEM_KEYWORDS = frozenset({"type", "refclass", "global", "extern", "fn", "entry"})


class _Parser:
    def __init__(self, text: str, file: str):
        self.file = file
        self.toks = tokenize(text, file)
        self.pos = 0

    # -- token plumbing

    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def span(self, tok: Optional[Token] = None) -> SourceSpan:
        tok = tok or self.tok
        return SourceSpan(self.file, tok.line, tok.col, tok.end)

    def error(self, expected: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else tok.text
        return ParseError(self.span(tok), expected, found)

    def advance(self) -> Token:
        tok = self.tok
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("punct", "ident", "arrow")

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(repr(text))
        return self.advance()

    def expect_kind(self, kind: str, what: str) -> Token:
        if self.tok.kind != kind:
            raise self.error(what)
        return self.advance()

    def skip_newlines(self) -> None:
        while self.tok.kind == "nl":
            self.advance()

    def end_of_statement(self) -> None:
        if self.tok.kind not in ("nl", "eof"):
            raise self.error("end of line")
        self.skip_newlines()

    # -- types and operands

    def parse_type(self) -> KirType:
        tok = self.expect_kind("ident", "a type")
        name = tok.text
        if name == "void":
            return VoidTy()
        if name == "ptr":
            if self.at("<"):
                self.advance()
                inner = self.parse_type()
                self.expect(">")
                return AddrTy(inner)
            return AddrTy()
        m = re.fullmatch(r"i([0-9]+)", name)
        if m:
            width = int(m.group(1))
            if not 1 <= width <= 128:
                raise self.error("an integer width between 1 and 128", tok)
            return IntTy(width)
        return AggRef(name)

    def parse_operand(self, ty: Optional[KirType] = None) -> Operand:
        tok = self.tok
        if tok.kind == "local":
            self.advance()
            return Value(tok.text[1:])
        if tok.kind == "global":
            self.advance()
            return Global(tok.text[1:])
        if tok.kind == "int":
            self.advance()
            value = int(tok.text)
            if ty is not None and not _fits(value, ty):
                raise ParseError(self.span(tok), f"a literal that fits {ty}", tok.text)
            return Const(value)
        if tok.kind == "ident" and tok.text == "null":
            self.advance()
            return NULL
        raise self.error("an operand")

    def parse_label(self) -> str:
        return self.expect_kind("label", "a block label").text[1:]

    def parse_path(self) -> tuple[str, ...]:
        tok = self.expect_kind("ident", "a field path")
        parts = tuple(tok.text.split("."))
        if any(not p for p in parts):
            raise self.error("a field path", tok)
        return parts

    # -- module items

    def parse_module(self) -> KirModule:
        types, classes, globals_, externs, funcs = [], [], [], [], []
        entry = None
        self.skip_newlines()
        while self.tok.kind != "eof":
            tok = self.tok
            if self.at("type"):
                types.append(self.parse_typedef())
            elif self.at("refclass"):
                self.advance()
                classes.append(self.expect_kind("ident", "a refclass name").text)
                self.end_of_statement()
            elif self.at("global"):
                self.advance()
                name = self.expect_kind("global", "a global name").text[1:]
                self.expect(":")
                globals_.append(GlobalVar(name, self.parse_type()))
                self.end_of_statement()
            elif self.at("extern"):
                externs.append(self.parse_extern())
            elif self.at("fn"):
                funcs.append(self.parse_function())
            elif self.at("entry"):
                if entry is not None:
                    raise self.error("a single entry declaration", tok)
                entry = self.parse_entry()
            else:
                raise self.error("'type', 'refclass', 'global', 'extern', 'fn' or 'entry'")
        module = KirModule(tuple(types), tuple(classes), tuple(globals_),
                           tuple(externs), tuple(funcs), entry)
        return _resolve_fieldaddrs(module)

    def parse_typedef(self) -> TypeDef:
        self.expect("type")
        name = self.expect_kind("ident", "a type name").text
        brace = self.tok
        self.expect("{")
        fields = []
        unterminated = ParseError(self.span(brace), "'}' closing this aggregate", "")

        def skip_nl():
            while self.tok.kind == "nl":
                self.advance()

        skip_nl()
        if not self.at("}"):
            while True:
                skip_nl()
                if self.tok.kind != "ident" or self._item_start():
                    raise _with_found(unterminated, self.tok)
                fname = self.advance().text
                self.expect(":")
                fields.append((fname, self.parse_type()))
                skip_nl()
                if self.at(","):
                    self.advance()
                    continue
                break
        if not self.at("}"):
            raise _with_found(unterminated, self.tok)
        self.advance()
        kref = None
        if self.at("kref"):
            self.advance()
            kref = self.parse_path()
        self.end_of_statement()
        return TypeDef(name, tuple(fields), kref)

    def _item_start(self) -> bool:
        # A top-level keyword not followed by ':' means the '}' is missing.
        nxt = self.toks[self.pos + 1] if self.pos + 1 < len(self.toks) else None
        return self.tok.text in _ITEM_KEYWORDS and (nxt is None or nxt.text != ":")

    def parse_extern(self) -> Extern:
        self.expect("extern")
        name = self.expect_kind("global", "an extern name").text[1:]
        self.expect("(")
        tys = []
        if not self.at(")"):
            tys.append(self.parse_type())
            while self.at(","):
                self.advance()
                tys.append(self.parse_type())
        self.expect(")")
        self.expect("->")
        ret = self.parse_type()
        self.end_of_statement()
        return Extern(name, tuple(tys), ret)

    def parse_entry(self) -> EntryDescriptor:
        self.expect("entry")
        tok = self.tok
        if tok.kind not in ("global", "ident"):
            raise self.error("an init function name")
        self.advance()
        name = tok.text.lstrip("@")
        recipe = []
        if self.at("("):
            self.advance()
            while not self.at(")"):
                rtok = self.expect_kind("ident", "an input recipe")
                if rtok.text not in RECIPES:
                    raise self.error(" or ".join(RECIPES), rtok)
                recipe.append(rtok.text)
                if self.at(","):
                    self.advance()
                elif not self.at(")"):
                    raise self.error("',' or ')'")
            self.advance()
        self.end_of_statement()
        return EntryDescriptor(name, tuple(recipe))

    def parse_function(self) -> KirFunction:
        self.expect("fn")
        name = self.expect_kind("global", "a function name").text[1:]
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                pname = self.expect_kind("local", "a parameter").text[1:]
                self.expect(":")
                pty = self.parse_type()
                attrs = set()
                while self.at(WRITEONLY):
                    self.advance()
                    attrs.add(WRITEONLY)
                params.append(Param(pname, pty, frozenset(attrs)))
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        self.expect("->")
        ret_ty = self.parse_type()
        self.expect("{")
        self.end_of_statement()
        blocks = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("'}' closing the function body")
            label = self.parse_label()
            self.expect(":")
            self.end_of_statement()
            instrs = []
            while self.tok.kind not in ("label", "eof") and not self.at("}"):
                instrs.append(self.parse_instruction())
                self.end_of_statement()
            blocks.append(Block(label, tuple(instrs)))
        self.advance()
        self.end_of_statement()
        if not blocks:
            raise self.error("at least one block")
        return KirFunction(name, tuple(params), ret_ty, tuple(blocks))

    # -- instructions

    def parse_instruction(self):
        result = None
        if self.tok.kind == "local":
            result = self.advance().text[1:]
            self.expect("=")
        tok = self.expect_kind("ident", "an instruction")
        op = tok.text
        handler = getattr(self, "_i_" + op, None)
        if op in BINOPS:
            handler = self._binop
        if handler is None:
            raise self.error("an instruction", tok)
        inst = handler(op)
        if inst.result_type() is None and result is not None:
            raise ParseError(self.span(tok), "an instruction producing a value", op)
        if inst.result_type() is not None and result is None \
                and not isinstance(inst, (Call, AsmOp)):
            raise ParseError(self.span(tok), "a result name for " + op, op)
        return replace(inst, result=result)

    def _i_alloca(self, _):
        return Alloca(ty=self.parse_type())

    def _i_load(self, _):
        ty = self.parse_type()
        self.expect(",")
        return Load(ty=ty, addr=self.parse_operand())

    def _i_store(self, _):
        ty = self.parse_type()
        val = self.parse_operand(ty)
        self.expect(",")
        return Store(ty=ty, value=val, addr=self.parse_operand())

    def _i_fieldaddr(self, _):
        agg = self.expect_kind("ident", "an aggregate name").text
        self.expect(",")
        base = self.parse_operand()
        self.expect(",")
        return FieldAddr(agg=agg, base=base, path=self.parse_path())

    def _i_call(self, _):
        ty = self.parse_type()
        callee = self.expect_kind("global", "a callee").text[1:]
        self.expect("(")
        args, attrs = [], []
        if not self.at(")"):
            while True:
                a = set()
                while self.at(WRITEONLY):
                    self.advance()
                    a.add(WRITEONLY)
                args.append(self.parse_operand())
                attrs.append(frozenset(a))
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        if not any(attrs):
            attrs = []
        return Call(ty=ty, callee=callee, args=tuple(args), arg_attrs=tuple(attrs))

    def _i_br(self, _):
        return Br(target=self.parse_label())

    def _i_condbr(self, _):
        cond = self.parse_operand()
        self.expect(",")
        a = self.parse_label()
        self.expect(",")
        return CondBr(cond=cond, then_target=a, else_target=self.parse_label())

    def _i_switch(self, _):
        ty = self.parse_type()
        val = self.parse_operand(ty)
        self.expect(",")
        default = self.parse_label()
        self.expect("[")
        cases = []
        while not self.at("]"):
            ctok = self.expect_kind("int", "a case value")
            if not _fits(int(ctok.text), ty):
                raise ParseError(self.span(ctok), f"a literal that fits {ty}", ctok.text)
            self.expect(":")
            cases.append((int(ctok.text), self.parse_label()))
            if self.at(","):
                self.advance()
            elif not self.at("]"):
                raise self.error("',' or ']'")
        self.advance()
        return Switch(ty=ty, value=val, default=default, cases=tuple(cases))

    def _i_phi(self, _):
        ty = self.parse_type()
        incoming = []
        while True:
            self.expect("[")
            blk = self.parse_label()
            self.expect(":")
            incoming.append((blk, self.parse_operand(ty)))
            self.expect("]")
            if not self.at(","):
                break
            self.advance()
        return Phi(ty=ty, incoming=tuple(incoming))

    def _i_ret(self, _):
        ty = self.parse_type()
        if isinstance(ty, VoidTy):
            return Ret(ty=ty)
        return Ret(ty=ty, value=self.parse_operand(ty))

    def _binop(self, op):
        ty = self.parse_type()
        lhs = self.parse_operand(ty)
        self.expect(",")
        return BinOp(op=op, ty=ty, lhs=lhs, rhs=self.parse_operand(ty))

    def _i_cmp(self, _):
        tok = self.expect_kind("ident", "a comparison predicate")
        if tok.text not in CMPOPS:
            raise self.error(" or ".join(CMPOPS), tok)
        ty = self.parse_type()
        lhs = self.parse_operand(ty)
        self.expect(",")
        return Cmp(op=tok.text, ty=ty, lhs=lhs, rhs=self.parse_operand(ty))

    def _i_cast(self, _):
        val = self.parse_operand()
        self.expect("to")
        return Cast(value=val, ty=self.parse_type())

    def _i_nondet(self, _):
        return Nondet(ty=self.parse_type())

    def _i_assert(self, _):
        return Assert(cond=self.parse_operand())

    def _i_assume(self, _):
        return Assume(cond=self.parse_operand())

    def _rc(self, cls):
        name = self.expect_kind("ident", "a refclass").text
        self.expect(",")
        return cls(refclass=name, obj=self.parse_operand())

    def _i_rc_inc(self, _):
        return self._rc(RcInc)

    def _i_rc_dec(self, _):
        return self._rc(RcDec)

    def _i_rc_delta(self, _):
        return RcDelta(refclass=self.expect_kind("ident", "a refclass").text)

    def _i_asm(self, _):
        mnem = self.expect_kind("string", "an asm mnemonic string").text[1:-1]
        ty = self.parse_type()
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.parse_operand())
            while self.at(","):
                self.advance()
                args.append(self.parse_operand())
        self.expect(")")
        return AsmOp(mnemonic=mnem, ty=ty, args=tuple(args))


def _with_found(err: ParseError, tok: Token) -> ParseError:
    found = "end of input" if tok.kind == "eof" else tok.text
    return ParseError(err.span, err.expected, found)


def _resolve_fieldaddrs(module: KirModule) -> KirModule:
    """Fill in the addressed field type of every ``fieldaddr``."""
    typedefs = module.typedefs()
    funcs = []
    for fn in module.functions:
        blocks = []
        for blk in fn.blocks:
            instrs = []
            for inst in blk.instrs:
                if isinstance(inst, FieldAddr):
                    fty = field_path_type(typedefs, inst.agg, inst.path)
                    inst = replace(inst, field_ty=fty if fty is not None else VoidTy())
                instrs.append(inst)
            blocks.append(Block(blk.label, tuple(instrs)))
        funcs.append(replace(fn, blocks=tuple(blocks)))
    return replace(module, functions=tuple(funcs))


def resolve_fieldaddrs(module: KirModule) -> KirModule:
    return _resolve_fieldaddrs(module)


def parse_module(text: str, file: str = "<input>") -> KirModule:
    """Parse KIR text. Raises :class:`ParseError` on the first fault."""
    return _Parser(text, file).parse_module()
