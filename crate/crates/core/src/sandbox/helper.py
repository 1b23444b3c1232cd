# Subprocess side of the reval sandbox. Reads one JSON request on stdin and
# writes line-delimited JSON records on stdout.
import ast
import io
import json
import sys

SUBJECT = "<subject>"
OPAQUE = "<opaque>"
MAX_DEPTH = 32


OUT = sys.stdout


def emit(rec):
    OUT.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    OUT.write("\n")
    OUT.flush()


# ---------------------------------------------------------------- parsing

TRIVIAL_CALLS = {"list", "dict", "set", "tuple", "str"}


def is_trivial_init(node):
    if isinstance(node, ast.Constant):
        v = node.value
        if v is None or v is False:
            return True
        if isinstance(v, (int, float, complex)) and not isinstance(v, bool):
            return v == 0
        if isinstance(v, (str, bytes)):
            return len(v) == 0
        return False
    if isinstance(node, (ast.List, ast.Tuple, ast.Set)):
        return len(node.elts) == 0
    if isinstance(node, ast.Dict):
        return len(node.keys) == 0
    if isinstance(node, ast.Call):
        return (isinstance(node.func, ast.Name) and node.func.id in TRIVIAL_CALLS
                and not node.args and not node.keywords)
    return False


def target_names(t, out):
    if isinstance(t, ast.Name):
        out.append(t.id)
    elif isinstance(t, (ast.Tuple, ast.List)):
        for e in t.elts:
            target_names(e, out)
    elif isinstance(t, ast.Starred):
        target_names(t.value, out)
    elif isinstance(t, ast.Subscript):
        base = t.value
        while isinstance(base, ast.Subscript):
            base = base.value
        if isinstance(base, ast.Name):
            out.append(base.id)
        else:
            target_names(base, out)
    elif isinstance(t, ast.Attribute):
        path = dotted(t)
        if path is not None:
            out.append(path)


def dotted(node):
    parts = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if isinstance(node, ast.Name):
        parts.append(node.id)
        return ".".join(reversed(parts))
    return None


def loaded_names(expr):
    # Variables read by an expression, in source order, without the callee
    # names of calls.
    callees = set()
    for n in ast.walk(expr):
        if isinstance(n, ast.Call):
            callees.add(id(n.func))
    found = []
    for n in ast.walk(expr):
        if id(n) in callees and isinstance(n, ast.Name):
            continue
        if isinstance(n, ast.Attribute) and isinstance(n.ctx, ast.Load) and id(n) not in callees:
            path = dotted(n)
            if path is not None:
                found.append((n.lineno, n.col_offset, path))
        elif isinstance(n, ast.Name) and isinstance(n.ctx, ast.Load):
            found.append((n.lineno, n.col_offset, n.id))
    found.sort()
    out = []
    for _, _, name in found:
        if name not in out:
            out.append(name)
    return out


def is_constant_expr(expr):
    if isinstance(expr, ast.Constant):
        return True
    if isinstance(expr, (ast.List, ast.Tuple, ast.Set)):
        return all(is_constant_expr(e) for e in expr.elts)
    if isinstance(expr, ast.Dict):
        return all(k is not None and is_constant_expr(k) for k in expr.keys) and all(
            is_constant_expr(v) for v in expr.values)
    if isinstance(expr, ast.UnaryOp):
        return is_constant_expr(expr.operand)
    return False


def is_noop(stmt):
    return isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Constant)


def header_end(stmt):
    first = None
    for field in ("body",):
        body = getattr(stmt, field, None)
        if body:
            first = body[0]
    if first is None or first.lineno <= stmt.lineno:
        return stmt.lineno
    # decorators precede the def line, so the header spans def..body-1
    return first.lineno - 1


class Lines:
    def __init__(self, source):
        self.lines = source.split("\n")

    def text(self, start, end):
        return "\n".join(self.lines[start - 1:end]).strip()


def stmt_node(stmt, lines):
    kind = "other"
    construct = "simple"
    info = {}
    if isinstance(stmt, (ast.Assign, ast.AnnAssign)):
        if isinstance(stmt, ast.AnnAssign) and stmt.value is None:
            kind = "other"
        else:
            kind = "assign"
            names = []
            targets = stmt.targets if isinstance(stmt, ast.Assign) else [stmt.target]
            for t in targets:
                target_names(t, names)
            info["targets"] = names
            info["trivial_rhs"] = is_trivial_init(stmt.value)
    elif isinstance(stmt, ast.AugAssign):
        kind = "aug_assign"
        names = []
        target_names(stmt.target, names)
        info["targets"] = names
    elif isinstance(stmt, ast.Return):
        kind = "return_stmt"
        construct = "return"
        if stmt.value is None:
            info["ret_names"] = []
            info["ret_const"] = True
        else:
            info["ret_names"] = loaded_names(stmt.value)
            info["ret_const"] = is_constant_expr(stmt.value)
    elif isinstance(stmt, ast.If):
        kind = "branch_head"
        construct = "if"
    elif isinstance(stmt, (ast.For, ast.AsyncFor)):
        kind = "loop_head"
        construct = "for"
        names = []
        target_names(stmt.target, names)
        info["targets"] = names
    elif isinstance(stmt, ast.While):
        kind = "loop_head"
        construct = "while"
    elif isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Call):
        kind = "call_stmt"
    elif isinstance(stmt, ast.Try):
        construct = "try"
    elif isinstance(stmt, (ast.With, ast.AsyncWith)):
        construct = "with"
    elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
        construct = "def"
    elif isinstance(stmt, ast.ClassDef):
        construct = "class"
    elif isinstance(stmt, ast.Break):
        construct = "break"
    elif isinstance(stmt, ast.Continue):
        construct = "continue"
    elif isinstance(stmt, ast.Raise):
        construct = "raise"
    elif hasattr(ast, "Match") and isinstance(stmt, ast.Match):
        kind = "branch_head"
        construct = "match"

    first = stmt.lineno
    if getattr(stmt, "decorator_list", None):
        first = min(d.lineno for d in stmt.decorator_list)
    if construct in ("if", "for", "while", "try", "with", "def", "class", "match"):
        end = header_end(stmt)
    else:
        end = stmt.end_lineno
    node = {
        "line": stmt.lineno,
        "first_line": first,
        "end_line": end,
        "text": lines.text(stmt.lineno, end),
        "kind": kind,
        "construct": construct,
    }
    node.update(info)
    if construct in ("def", "class"):
        return node
    if construct == "match":
        node["cases"] = [body_nodes(c.body, lines) for c in stmt.cases]
        return node
    if hasattr(stmt, "body"):
        node["body"] = body_nodes(stmt.body, lines)
    if getattr(stmt, "orelse", None):
        node["orelse"] = body_nodes(stmt.orelse, lines)
    if isinstance(stmt, ast.Try):
        node["handlers"] = []
        for h in stmt.handlers:
            hend = h.body[0].lineno - 1 if h.body[0].lineno > h.lineno else h.lineno
            node["handlers"].append({
                "line": h.lineno,
                "first_line": h.lineno,
                "end_line": hend,
                "text": lines.text(h.lineno, hend),
                "kind": "other",
                "construct": "handler",
                "body": body_nodes(h.body, lines),
            })
        if stmt.finalbody:
            node["finalbody"] = body_nodes(stmt.finalbody, lines)
    return node


def body_nodes(stmts, lines):
    out = []
    last_line = 0
    for s in stmts:
        if is_noop(s):
            continue
        if s.lineno <= last_line:
            # statements sharing a line with their header are folded into it
            continue
        out.append(stmt_node(s, lines))
        last_line = s.end_lineno if not hasattr(s, "body") else s.lineno
    return out


def collect_functions(stmts, lines, prefix, out):
    for s in stmts:
        if isinstance(s, (ast.FunctionDef, ast.AsyncFunctionDef)):
            qual = prefix + s.name
            out.append({
                "name": s.name,
                "qualname": qual,
                "def_line": s.lineno,
                "is_method": bool(prefix) and prefix.endswith(".") and not prefix.endswith("<locals>."),
                "body": body_nodes(s.body, lines),
            })
            collect_functions(s.body, lines, qual + ".<locals>.", out)
        elif isinstance(s, ast.ClassDef):
            collect_functions(s.body, lines, prefix + s.name + ".", out)
        else:
            for field in ("body", "orelse", "finalbody"):
                sub = getattr(s, field, None)
                if sub:
                    collect_functions(sub, lines, prefix, out)
            for h in getattr(s, "handlers", []) or []:
                collect_functions(h.body, lines, prefix, out)


def parse_program(source):
    tree = ast.parse(source, filename=SUBJECT)
    lines = Lines(source)
    functions = []
    collect_functions(tree.body, lines, "", functions)
    return functions


def line_map(functions):
    # source line -> (statement line, construct, end_line of construct body)
    mapping = {}
    with_spans = {}

    def walk(nodes):
        for n in nodes:
            for ln in range(n["first_line"], n["end_line"] + 1):
                mapping[ln] = n["line"]
            if n["construct"] == "with":
                with_spans[n["line"]] = span_end(n)
            for key in ("body", "orelse", "finalbody"):
                if key in n:
                    walk(n[key])
            for h in n.get("handlers", []):
                for ln in range(h["first_line"], h["end_line"] + 1):
                    mapping[ln] = h["line"]
                walk(h["body"])
            for c in n.get("cases", []):
                walk(c)

    for f in functions:
        walk(f["body"])
    return mapping, with_spans


def span_end(node):
    end = node["end_line"]
    for key in ("body", "orelse", "finalbody"):
        for child in node.get(key, []):
            end = max(end, span_end(child))
    for h in node.get("handlers", []):
        end = max(end, span_end(h))
    for c in node.get("cases", []):
        for child in c:
            end = max(end, span_end(child))
    return end


# ------------------------------------------------------- canonicalization

class NotRepresentable(Exception):
    pass


def render(value, depth=0):
    if depth > MAX_DEPTH:
        raise NotRepresentable()
    if value is None or isinstance(value, (bool, int, float, complex, str, bytes)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(render(v, depth + 1) for v in value) + "]"
    if isinstance(value, tuple) and type(value) is tuple:
        items = [render(v, depth + 1) for v in value]
        if len(items) == 1:
            return "(" + items[0] + ",)"
        return "(" + ", ".join(items) + ")"
    if isinstance(value, (set, frozenset)):
        items = sorted(render(v, depth + 1) for v in value)
        if isinstance(value, frozenset):
            return "frozenset({" + ", ".join(items) + "})" if items else "frozenset()"
        return "{" + ", ".join(items) + "}" if items else "set()"
    if isinstance(value, dict):
        return "{" + ", ".join(
            render(k, depth + 1) + ": " + render(v, depth + 1) for k, v in value.items()) + "}"
    if isinstance(value, range):
        return repr(value)
    if callable(value) or isinstance(value, (type, io.IOBase)) or type(value).__module__ == "builtins":
        raise NotRepresentable()
    fields = getattr(value, "__dict__", None)
    if isinstance(fields, dict):
        inner = ", ".join(
            str(k) + "=" + render(v, depth + 1) for k, v in fields.items() if not str(k).startswith("_"))
        return type(value).__name__ + "(" + inner + ")"
    raise NotRepresentable()


def snapshot_value(value):
    type_name = type(value).__name__
    try:
        return {"value_repr": render(value), "type_name": type_name, "representable": True}
    except (NotRepresentable, RecursionError, ValueError):
        return {"value_repr": OPAQUE, "type_name": type_name, "representable": False}
    except Exception:
        return {"value_repr": OPAQUE, "type_name": type_name, "representable": False}


def snapshot_locals(raw, is_method):
    state = {}
    for name, value in raw.items():
        if name == "self" and is_method:
            attrs = getattr(value, "__dict__", None)
            if isinstance(attrs, dict):
                for attr, v in attrs.items():
                    state["self." + str(attr)] = snapshot_value(v)
            continue
        if name.startswith("__") and name.endswith("__"):
            continue
        state[name] = snapshot_value(value)
    return state


# ------------------------------------------------------------------ tracing

class Overflow(Exception):
    pass


class Tracer:
    def __init__(self, functions, max_steps):
        self.mapping, self.with_spans = line_map(functions)
        self.method_lines = {f["def_line"] for f in functions if f["is_method"]}
        self.max_steps = max_steps
        self.next_index = 0
        # frame -> [pending step index or None, pending stmt line or None, last stmt line]
        self.frames = {}

    def alloc(self):
        if self.next_index >= self.max_steps:
            raise Overflow()
        i = self.next_index
        self.next_index += 1
        return i

    def is_method(self, frame):
        return frame.f_code.co_firstlineno in self.method_lines or "self" in frame.f_code.co_varnames[:1]

    def snapshot(self, frame):
        return snapshot_locals(dict(frame.f_locals), self.is_method(frame))

    def flush(self, frame):
        entry = self.frames.get(frame)
        if entry is not None and entry[0] is not None:
            emit({"rec": "step", "step_index": entry[0], "line_no": entry[1], "event": "stmt",
                  "state_after": self.snapshot(frame)})
            entry[0] = None

    def global_trace(self, frame, event, arg):
        code = frame.f_code
        if code.co_filename != SUBJECT or code.co_name.startswith("<"):
            return None
        if event == "call":
            idx = self.alloc()
            self.frames[frame] = [None, None, None]
            emit({"rec": "step", "step_index": idx, "line_no": code.co_firstlineno, "event": "call",
                  "state_after": self.snapshot(frame)})
            return self.local_trace
        return None

    def local_trace(self, frame, event, arg):
        entry = self.frames.setdefault(frame, [None, None, None])
        if event == "line":
            stmt = self.mapping.get(frame.f_lineno)
            if stmt is None:
                return self.local_trace
            if entry[0] is not None and entry[1] == stmt:
                return self.local_trace
            last = entry[2]
            if stmt in self.with_spans and last is not None and stmt < last <= self.with_spans[stmt]:
                return self.local_trace
            self.flush(frame)
            entry[0] = self.alloc()
            entry[1] = stmt
            entry[2] = stmt
        elif event == "return":
            self.flush(frame)
            idx = self.alloc()
            line = self.mapping.get(frame.f_lineno, frame.f_lineno)
            emit({"rec": "step", "step_index": idx, "line_no": line, "event": "return_event",
                  "state_after": self.snapshot(frame)})
            self.frames.pop(frame, None)
        return self.local_trace


def run_trace(req):
    program = req["program"]
    env = {"__name__": "__reval_subject__"}
    try:
        functions = parse_program(program)
        exec(compile(program, SUBJECT, "exec"), env)
        call = compile(req["invocation"], "<invocation>", "eval")
    except BaseException as exc:
        emit({"rec": "setup_error", "detail": type(exc).__name__ + ": " + str(exc)[:200]})
        return
    tracer = Tracer(functions, req["max_steps"])
    sys.settrace(tracer.global_trace)
    try:
        result = eval(call, env)
    except Overflow:
        sys.settrace(None)
        emit({"rec": "end", "terminated": "timeout", "output_value": None, "detail": "step limit"})
        return
    except BaseException as exc:
        sys.settrace(None)
        emit({"rec": "end", "terminated": "exception", "output_value": None,
              "detail": type(exc).__name__ + ": " + str(exc)[:200]})
        return
    sys.settrace(None)
    emit({"rec": "end", "terminated": "ok", "output_value": snapshot_value(result), "detail": ""})


def run_grade(req):
    env = {"__name__": "__reval_subject__"}
    try:
        exec(compile(req["program"], SUBJECT, "exec"), env)
        if req.get("prelude"):
            exec(compile(req["prelude"], "<prelude>", "exec"), env)
        code = compile(req["assertion"], "<assertion>", "exec")
    except BaseException as exc:
        emit({"rec": "grade", "outcome": "error", "detail": type(exc).__name__})
        return
    try:
        exec(code, env)
    except AssertionError:
        emit({"rec": "grade", "outcome": "fail", "detail": "AssertionError"})
        return
    except BaseException as exc:
        emit({"rec": "grade", "outcome": "error", "detail": type(exc).__name__})
        return
    emit({"rec": "grade", "outcome": "pass", "detail": ""})


def run_snapshot(req):
    env = {}
    exec(compile(req["program"], SUBJECT, "exec"), env)
    raw = {k: v for k, v in env.items() if k != "__builtins__"}
    emit({"rec": "state", "state": snapshot_locals(raw, False)})


def run_parse(req):
    try:
        functions = parse_program(req["program"])
    except SyntaxError as exc:
        emit({"rec": "parse", "ok": False, "error": "line %s: %s" % (exc.lineno, exc.msg), "functions": []})
        return
    emit({"rec": "parse", "ok": True, "error": "", "functions": functions})


def main():
    req = json.loads(sys.stdin.read())
    sys.stdout = io.StringIO()
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 4000))
    mode = req["mode"]
    if mode == "parse":
        run_parse(req)
    elif mode == "trace":
        run_trace(req)
    elif mode == "grade":
        run_grade(req)
    elif mode == "snapshot":
        run_snapshot(req)
    else:
        emit({"rec": "error", "detail": "unknown mode " + mode})


if __name__ == "__main__":
    main()
