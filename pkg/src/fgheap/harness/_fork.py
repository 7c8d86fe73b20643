"""Run a callable in a forked child so faults and aborts stay contained."""
import faulthandler
import os
import resource
import selectors
import signal
import sys
import traceback
from dataclasses import dataclass

EXIT_CORRUPTED = 3
EXIT_ERROR = 4


@dataclass
class ChildOutcome:
    exit_code: int | None
    signal: int | None
    stderr: str
    stdout: bytes

    @property
    def faulted(self):
        return self.signal in (signal.SIGSEGV, signal.SIGBUS)


def _drain(*fds):
    chunks = {fd: [] for fd in fds}
    open_fds = set(fds)
    with selectors.DefaultSelector() as sel:
        for fd in fds:
            sel.register(fd, selectors.EVENT_READ)
        while open_fds:
            for key, _ in sel.select():
                chunk = os.read(key.fd, 65536)
                if chunk:
                    chunks[key.fd].append(chunk)
                else:
                    sel.unregister(key.fd)
                    open_fds.discard(key.fd)
                    os.close(key.fd)
    return [b"".join(chunks[fd]) for fd in fds]


def run_forked(fn, *args):
    """Call ``fn(*args)`` in a child.

    The child's stderr is captured; whatever ``fn`` returns (bytes) is passed
    back as ``stdout``.  A normal return exits 0; an exception exits
    ``EXIT_ERROR`` after printing the traceback.
    """
    err_r, err_w = os.pipe()
    out_r, out_w = os.pipe()
    sys.stdout.flush()
    sys.stderr.flush()
    pid = os.fork()
    if pid == 0:
        code = 0
        try:
            os.close(err_r)
            os.close(out_r)
            os.dup2(err_w, 2)
            sys.stderr = os.fdopen(2, "w", closefd=False)
            resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
            faulthandler.disable()  # faults are an expected outcome here
            payload = fn(*args)
            if payload:
                os.write(out_w, payload)
        except SystemExit as exc:
            code = exc.code if isinstance(exc.code, int) else EXIT_ERROR
        except BaseException:
            traceback.print_exc()
            code = EXIT_ERROR
        finally:
            try:
                sys.stderr.flush()
            finally:
                os._exit(code)
    os.close(err_w)
    os.close(out_w)
    out, err = _drain(out_r, err_r)
    _, status = os.waitpid(pid, 0)
    if os.WIFSIGNALED(status):
        return ChildOutcome(None, os.WTERMSIG(status), err.decode(errors="replace"), out)
    return ChildOutcome(os.WEXITSTATUS(status), None, err.decode(errors="replace"), out)
