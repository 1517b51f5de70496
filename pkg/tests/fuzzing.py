"""Malformed cloud files for parser robustness tests."""

import numpy as np

from planefuse.geometry import PointCloud
from planefuse.io import format_cloud


def random_cloud(rng, n=None, colors=None, tag=None):
    n = int(rng.integers(1, 40)) if n is None else n
    scale = 10.0 ** rng.uniform(-3, 4)
    pts = rng.normal(0, scale, (n, 3))
    if colors is None:
        colors = bool(rng.integers(2))
    cols = rng.integers(0, 256, (n, 3)).astype(np.uint8) if colors else None
    return PointCloud(pts, cols, tag or ("laser", "vision")[int(rng.integers(2))])


def _replace_token(rng, text, token, body_start):
    lines = text.splitlines()
    k = int(rng.integers(body_start, len(lines)))
    words = lines[k].split()
    words[int(rng.integers(len(words)))] = token
    lines[k] = " ".join(words)
    return "\n".join(lines) + "\n"


def _header_len(lines):
    return lines.index("end_header") + 1


def _mutations(rng, fmt_name, text):
    lines = text.splitlines()
    body = _header_len(lines) if fmt_name == "ply" else (1 if lines[0].startswith("#") else 0)
    bad_token = ("nan", "inf", "-inf", "abc", "1.2.3", "0x", "--1", "1e", "")

    def token():
        return _replace_token(rng, text, bad_token[int(rng.integers(len(bad_token) - 1))], body)

    def drop_column():
        k = int(rng.integers(body, len(lines)))
        out = list(lines)
        out[k] = " ".join(out[k].split()[:-1])
        return "\n".join(out) + "\n"

    def add_column():
        k = int(rng.integers(body, len(lines)))
        out = list(lines)
        out[k] = out[k] + " 1.5"
        return "\n".join(out) + "\n"

    muts = [token, drop_column, add_column]
    if fmt_name == "ply":
        def count_up():
            return text.replace("element vertex ", "element vertex 1", 1)

        def extra_row():
            return text + lines[-1] + "\n"

        def no_magic():
            return "\n".join(lines[1:]) + "\n"

        def no_end():
            return "\n".join(l for l in lines if l != "end_header") + "\n"

        def bad_format():
            return text.replace("format ascii 1.0", "format binary_little_endian 1.0", 1)

        def bad_count():
            return text.replace("element vertex ", "element vertex x", 1)

        def drop_prop():
            return text.replace("property float z\n", "", 1)

        muts += [count_up, extra_row, no_magic, no_end, bad_format, bad_count, drop_prop]
    else:
        def bad_row():
            if len(lines[-1].split()) == 6:
                return text + "1.0 2.0 3.0 256 0 0\n"
            return text + "1.0 2.0 3.0 4.0\n"
        muts.append(bad_row)
    return muts


def malformed_corpus(n=1000, seed=0):
    """``n`` (format, text) pairs, every one of which must be rejected."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        fmt_name = ("xyz", "ply")[len(out) % 2]
        cloud = random_cloud(rng, n=int(rng.integers(2, 20)))
        text = format_cloud(cloud, fmt_name)
        muts = _mutations(rng, fmt_name, text)
        out.append((fmt_name, muts[int(rng.integers(len(muts)))]()))
    return out


def garbage_corpus(n=1000, seed=0):
    """Random byte-level damage: may or may not still be a valid file."""
    rng = np.random.default_rng(seed)
    out = []
    alphabet = list("0123456789.-+eE \n\tnaifxyz#plyr") + ["end_header\n", "element vertex 3\n"]
    for k in range(n):
        fmt_name = ("xyz", "ply")[k % 2]
        text = list(format_cloud(random_cloud(rng, n=int(rng.integers(1, 8))), fmt_name))
        for _ in range(int(rng.integers(1, 6))):
            i = int(rng.integers(len(text)))
            op = int(rng.integers(3))
            if op == 0:
                del text[i]
            elif op == 1:
                text.insert(i, alphabet[int(rng.integers(len(alphabet)))])
            else:
                text[i] = alphabet[int(rng.integers(len(alphabet)))]
        out.append((fmt_name, "".join(text)))
    return out
