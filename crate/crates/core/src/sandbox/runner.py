# Candidate-program runner used by the sandbox. Invoked as
#   python3 -I runner.py CONFIG_JSON
# CONFIG_JSON holds: program, io_mode, entry_point, expected, result.
import ast
import json
import sys
import traceback

COMPILE_ERROR_EXIT = 113


def _deny_network(*args, **kwargs):
    raise OSError("network access is disabled in the sandbox")


def _block_network():
    import socket

    socket.socket = _deny_network
    socket.create_connection = _deny_network
    socket.socketpair = _deny_network
    socket.getaddrinfo = _deny_network


def _literal(text):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
        return eval(text, {"__builtins__": __builtins__})


def _parse_args(text):
    text = text.strip()
    if not text:
        return ()
    return _literal("(" + text + ",)")


def _canonical(expected):
    try:
        return repr(_literal(expected.strip()))
    except Exception:
        return expected.strip()


def main():
    with open(sys.argv[1]) as f:
        cfg = json.load(f)
    path = cfg["program"]
    with open(path) as f:
        source = f.read()
    try:
        code = compile(source, path, "exec")
    except (SyntaxError, ValueError):
        traceback.print_exc(limit=0)
        sys.exit(COMPILE_ERROR_EXIT)

    _block_network()
    sys.argv = [path]
    sys.setrecursionlimit(10000)

    if cfg["io_mode"] == "stdin_stdout":
        scope = {"__name__": "__main__", "__file__": path, "__builtins__": __builtins__}
        exec(code, scope)
        return

    scope = {"__name__": "__candidate__", "__file__": path, "__builtins__": __builtins__}
    exec(code, scope)
    entry = cfg["entry_point"]
    fn = scope.get(entry)
    if not callable(fn):
        print("entry point %r is not defined" % entry, file=sys.stderr)
        sys.exit(1)
    args = _parse_args(sys.stdin.read())
    result = fn(*args)
    with open(cfg["result"], "w") as f:
        json.dump({"actual": repr(result), "expected": _canonical(cfg["expected"])}, f)


if __name__ == "__main__":
    main()
