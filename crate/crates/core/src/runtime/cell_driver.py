# Code-cell driver. Requests arrive as JSON lines on the original stdin and
# replies leave on the original stdout; cell output goes to a temp file.
import ast
import json
import os
import sys
import tempfile
import traceback

_proto_in = os.fdopen(os.dup(0), "r", encoding="utf-8")
_proto_out = os.fdopen(os.dup(1), "w", encoding="utf-8")
_devnull = os.open(os.devnull, os.O_RDWR)
os.dup2(_devnull, 0)
os.dup2(_devnull, 1)
os.dup2(_devnull, 2)


def _send(msg):
    _proto_out.write(json.dumps(msg) + "\n")
    _proto_out.flush()


def _skill(name, **kwargs):
    _send({"type": "skill", "name": name, "args": kwargs, "cwd": os.getcwd()})
    reply = json.loads(_proto_in.readline())
    sys.stdout.flush()
    print(reply["text"])


_ns = {"__name__": "__main__", "__builtins__": __builtins__}
for _name, _params in json.loads(os.environ.get("AK_SKILLS", "[]")):
    _args = [p.strip() for p in _params.split(",") if p.strip()]
    _kw = ", ".join("%s=%s" % (a.split("=")[0], a.split("=")[0]) for a in _args)
    _src = "def %s(%s):\n    _skill(%r%s)\n" % (_name, ", ".join(_args), _name, (", " + _kw) if _kw else "")
    exec(_src, {"_skill": _skill}, _ns)


def _run(code):
    tree = ast.parse(code, "<cell>", "exec")
    last = None
    if tree.body and isinstance(tree.body[-1], ast.Expr):
        last = ast.Expression(tree.body.pop().value)
    exec(compile(tree, "<cell>", "exec"), _ns)
    if last is not None:
        value = eval(compile(last, "<cell>", "eval"), _ns)
        if value is not None:
            print(repr(value))


for _line in _proto_in:
    _req = json.loads(_line)
    _fd, _path = tempfile.mkstemp(prefix="ak-cell-")
    os.dup2(_fd, 1)
    os.dup2(_fd, 2)
    try:
        _run(_req["code"])
    except SystemExit as e:
        print("SystemExit: %s" % (e.code,))
    except BaseException:
        _etype, _evalue, _tb = sys.exc_info()
        # drop the driver's own frames
        while _tb is not None and _tb.tb_frame.f_code.co_filename != "<cell>":
            _tb = _tb.tb_next
        traceback.print_exception(_etype, _evalue, _tb)
    sys.stdout.flush()
    sys.stderr.flush()
    os.dup2(_devnull, 1)
    os.dup2(_devnull, 2)
    with open(_path, encoding="utf-8", errors="replace") as f:
        _out = f.read()
    os.close(_fd)
    os.unlink(_path)
    _send({"type": "done", "output": _out})
