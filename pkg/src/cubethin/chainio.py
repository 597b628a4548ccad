"""Chain files.

Text form: a header line ``d=<int>,scores=<0|1>`` (an optional ``,n=<int>``
may follow), then one comma-separated row per state holding ``d`` values,
or ``2d`` when scores are present (state first, then score). Blank lines
and lines starting with ``#`` are skipped.

Binary form: the magic bytes ``CBTH1`` and a newline, the same header line
(``n`` required), then ``n * fields`` little-endian float64 values in row
order.
"""

import numpy as np

from .control_variates import Chain
from .errors import DimensionError, ParseError

MAGIC = b"CBTH1\n"


def _parse_header(text, path, line=1):
    fields = {}
    for part in text.strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise ParseError(f"malformed header field {part!r}", path, line)
        try:
            fields[key.strip()] = int(value)
        except ValueError:
            raise ParseError(f"header field {key.strip()!r} is not an integer", path, line) from None
    if "d" not in fields or "scores" not in fields:
        raise ParseError("header must declare d=<int>,scores=<0|1>", path, line)
    d, scores = fields["d"], fields["scores"]
    if d < 1 or scores not in (0, 1):
        raise ParseError(f"invalid header d={d}, scores={scores}", path, line)
    n = fields.get("n")
    if n is not None and n < 1:
        raise ParseError(f"invalid header n={n}", path, line)
    return d, bool(scores), n


def _to_chain(data, d, scores, burn_in=0):
    if scores:
        return Chain(data[:, :d], data[:, d:], burn_in=burn_in)
    return Chain(data, burn_in=burn_in)


def _read_text(fh, path):
    header = fh.readline()
    if not header:
        raise ParseError("empty file", path, 1)
    d, scores, n = _parse_header(header, path)
    width = 2 * d if scores else d
    rows = []
    for lineno, line in enumerate(fh, start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise DimensionError(f"expected {width} fields, found {len(parts)}", path, lineno)
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise ParseError("non-numeric field", path, lineno) from None
        if not all(np.isfinite(row)):
            raise ParseError("non-finite value", path, lineno)
        rows.append(row)
    if not rows:
        raise ParseError("no data rows", path)
    if n is not None and n != len(rows):
        raise ParseError(f"header declares n={n} but {len(rows)} rows were read", path)
    return _to_chain(np.array(rows, dtype=float), d, scores)


def _read_binary(fh, path):
    fh.read(len(MAGIC))
    d, scores, n = _parse_header(fh.readline().decode("ascii", "replace"), path, 2)
    if n is None:
        raise ParseError("binary chain header must declare n", path, 2)
    width = 2 * d if scores else d
    raw = fh.read()
    if len(raw) != 8 * n * width:
        raise DimensionError(f"expected {8 * n * width} data bytes, found {len(raw)}", path)
    data = np.frombuffer(raw, dtype="<f8").reshape(n, width).astype(float)
    bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if bad.size:
        raise ParseError(f"non-finite value in row {bad[0] + 1}", path)
    return _to_chain(data, d, scores)


def ingest_chain(path):
    """Read a chain file (text or binary, detected from the first bytes).

    Raises
    ------
    ParseError
        Unreadable file, bad header, non-numeric or non-finite values.
    DimensionError
        A row with the wrong number of fields.
    """
    path = str(path)
    try:
        with open(path, "rb") as fh:
            binary = fh.read(len(MAGIC)) == MAGIC
        if binary:
            with open(path, "rb") as fh:
                return _read_binary(fh, path)
        with open(path, encoding="utf-8") as fh:
            return _read_text(fh, path)
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), path) from None
    except UnicodeDecodeError:
        raise ParseError("not a text chain file", path) from None


def write_chain(chain, path, binary=False):
    """Write ``chain`` in the text (17 significant digits) or binary format."""
    data = chain.states if not chain.has_scores else np.hstack([chain.states, chain.scores])
    header = f"d={chain.d},scores={int(chain.has_scores)},n={chain.N}\n"
    if binary:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        for row in data:
            fh.write(",".join("%.17g" % v for v in row))
            fh.write("\n")
