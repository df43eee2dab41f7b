"""Command line interface.

Exit codes: 0 success (or valid signature), 1 invalid signature or rejected
message, 2 usage error, 3 I/O or network error.  Errors print one line to
stderr in the form ``streamsign: error: <Kind>: <reason>``.
"""

from __future__ import annotations

import argparse
import mimetypes
import os
import sys
from dataclasses import replace

from . import bench as bench_mod
from . import mime, transport, xop
from .errors import SinkError, SourceError, StreamSignError
from .wssec import KeyMaterial, keys as keys_mod
from .wssec import sign_blocking, sign_streaming, verify
from .wssec.constants import NS_SOAP
from .xmlcore import XmlName, XmlNode, element, parse

ATTACHMENT_NS = "urn:streamsign:attachment"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_IO = 3

_IO_ERRORS = (
    OSError,
    SinkError,
    SourceError,
    transport.TransportError,
    bench_mod.ServerUnavailable,
)


def _err(exc: BaseException) -> None:
    print(f"streamsign: error: {type(exc).__name__}: {exc}", file=sys.stderr)


def _open_in(path: str):
    if path == "-":
        return sys.stdin.buffer
    return open(path, "rb")


def _open_out(path: str):
    if path == "-":
        return sys.stdout.buffer
    return open(path, "wb")


def _load_keys(key_path: str, wrap_key_path: str | None) -> KeyMaterial:
    """Load a key PEM, accepting either a private or a public key file."""
    with open(key_path, "rb") as fh:
        pem = fh.read()
    if b"PRIVATE KEY" in pem:
        return keys_mod.load(private_key_path=key_path, wrap_key_path=wrap_key_path)
    return keys_mod.load(public_key_path=key_path, wrap_key_path=wrap_key_path)


def _attach_envelope(envelope_path: str, attachments: list[str]):
    """Parse the envelope and append one carrier element per attachment.

    Carriers go under the SOAP Body when one exists, else under the root.
    Returns (envelope, binaries keyed by element path).
    """
    with _open_in(envelope_path) as fh:
        envelope = parse(fh.read())

    body_index = None
    for i, child in enumerate(envelope.element_children()):
        if child.name.namespace_uri == NS_SOAP and child.name.local == "Body":
            body_index = i
            break

    binaries = {}
    for filepath in attachments:
        media_type = mimetypes.guess_type(filepath)[0] or "application/octet-stream"
        carrier = element(
            XmlName("Data", ATTACHMENT_NS, "att"),
            attributes=[
                (XmlName("name"), os.path.basename(filepath)),
                (XmlName("media-type"), media_type),
            ],
        )
        if body_index is None:
            parent_path: tuple[int, ...] = ()
            parent = envelope
        else:
            parent_path = (body_index,)
            parent = envelope.element_children()[body_index]
        new_parent = replace(parent, children=parent.children + (carrier,))
        if parent_path:
            from .xmlcore import replace_path

            envelope = replace_path(envelope, parent_path, new_parent)
        else:
            envelope = new_parent
        carrier_index = len(new_parent.element_children()) - 1
        path = parent_path + (carrier_index,)
        binaries[path] = xop.BinaryContent(
            source=_file_or_stdin_source(filepath), media_type=media_type
        )
    return envelope, binaries


def _file_or_stdin_source(path: str):
    from .sources import file_source, single_pass

    if path == "-":
        return single_pass(iter(lambda: sys.stdin.buffer.read(64 * 1024), b""))
    return file_source(path)


def parse_size(text: str) -> int:
    value = text.strip().lower()
    for suffix, factor in (("gib", 1 << 30), ("mib", 1 << 20), ("kib", 1 << 10)):
        if value.endswith(suffix):
            return int(float(value[: -len(suffix)]) * factor)
    return int(value)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_keygen(args) -> int:
    material = keys_mod.generate(bits=args.bits)
    for path in keys_mod.save(material, args.out_dir):
        print(path)
    return EXIT_OK


def _cmd_pack(args) -> int:
    envelope, binaries = _attach_envelope(args.envelope, args.attach)
    with _open_out(args.out) as sink:
        package = xop.extract(envelope, binaries)
        xop.write_package(package, sink, with_header=True)
    return EXIT_OK


def _cmd_sign(args) -> int:
    if args.strict and args.mode != "streaming":
        raise argparse.ArgumentTypeError("--strict requires --mode streaming")
    keys = _load_keys(args.key, args.wrap_key)
    if keys.signing_key is None:
        raise keys_mod.KeyMaterialError(f"{args.key} holds no private key")
    envelope, binaries = _attach_envelope(args.envelope, args.attach)
    with _open_out(args.out) as sink:
        if args.mode == "blocking":
            sign_blocking(envelope, binaries, keys, sink, with_header=True)
        else:
            sign_streaming(
                envelope, binaries, keys, sink, strict=args.strict, with_header=True
            )
    return EXIT_OK


def _cmd_verify(args) -> int:
    keys = _load_keys(args.key, args.wrap_key)
    with _open_in(args.infile) as source:
        report = verify(source, keys)
    print(report.to_json())
    return EXIT_OK if report.signature_valid else EXIT_INVALID


def _cmd_send(args) -> int:
    endpoint = transport.Endpoint.parse(args.to)
    throttle = None
    if args.rate:
        throttle = transport.ThrottleConfig(rate=float(args.rate), bucket=args.bucket)
    source = _open_in(args.infile)
    with source:
        top = mime.read_package_header(source)
        content_type = top.get("content-type")
        if not content_type:
            raise mime.MalformedHeaders("input lacks a package Content-Type header")

        def produce(sink) -> None:
            while True:
                block = source.read(64 * 1024)
                if not block:
                    return
                sink.write(block)

        result = transport.send(
            endpoint, produce, throttle=throttle, content_type=content_type
        )
    sys.stdout.write(result.body.decode("utf-8", "replace").rstrip("\n") + "\n")
    return EXIT_OK if result.status == 200 else EXIT_INVALID


def _cmd_serve(args) -> int:
    endpoint = transport.Endpoint.parse(args.listen)
    keys = _load_keys(args.key, args.wrap_key)
    handler = transport.make_verify_handler(keys, allow_unsigned=not args.reject_unsigned)
    handle = transport.serve(endpoint, handler)
    print(f"listening on {handle.endpoint.host}:{handle.endpoint.port}", flush=True)
    try:
        import threading

        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        handle.close()
    return EXIT_OK


def _cmd_bench(args) -> int:
    if args.key:
        keys = _load_keys(args.key, args.wrap_key)
    else:
        keys = keys_mod.generate()
    throttle = None
    if args.rate > 0:
        throttle = transport.ThrottleConfig(rate=float(args.rate), bucket=args.bucket)
    config = bench_mod.BenchConfig(
        sizes=tuple(parse_size(s) for s in args.sizes.split(",")),
        modes=tuple(args.modes.split(",")),
        repetitions=args.reps,
        throttle=throttle,
        warmup=args.warmup,
        seed=args.seed,
    )

    handle = None
    try:
        if args.endpoint:
            endpoint = transport.Endpoint.parse(args.endpoint)
        else:
            handle = transport.serve(
                transport.Endpoint(host="127.0.0.1", port=0),
                transport.make_verify_handler(keys),
            )
            endpoint = handle.endpoint

        def progress(size, mode, rep, wall) -> None:
            print(
                f"  {size >> 20:>6} MiB  {mode:<16} rep {rep}: {wall:.2f} s",
                file=sys.stderr,
                flush=True,
            )

        report = bench_mod.run_benchmark(config, keys, endpoint, progress=progress)
    finally:
        if handle is not None:
            handle.close()

    bench_mod.emit_csv(report, args.out)
    print(f"wrote {args.out}")
    if args.plot_data:
        bench_mod.emit_plot_data(report, args.plot_data)
        print(f"wrote {args.plot_data}")
    if not args.no_figures:
        for path in bench_mod.render_figures(report, args.out):
            print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamsign",
        description="Sign, verify, send and benchmark XOP-packaged messages.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate an RSA keypair plus wrap key")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bits", type=int, default=2048)
    p.set_defaults(func=_cmd_keygen)

    p = sub.add_parser("pack", help="build an unsigned XOP package")
    p.add_argument("--envelope", required=True, help="XML envelope file, or -")
    p.add_argument("--attach", action="append", default=[], metavar="FILE")
    p.add_argument("--out", required=True, help="output package file, or -")
    p.set_defaults(func=_cmd_pack)

    p = sub.add_parser("sign", help="sign an envelope with attachments")
    p.add_argument("--mode", choices=("blocking", "streaming"), required=True)
    p.add_argument("--strict", action="store_true",
                   help="streaming only: encrypt the deferred signature part")
    p.add_argument("--key", required=True, help="private key PEM")
    p.add_argument("--wrap-key", default=None, help="base64 wrap key file (strict mode)")
    p.add_argument("--envelope", required=True)
    p.add_argument("--attach", action="append", default=[], metavar="FILE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sign)

    p = sub.add_parser("verify", help="verify a signed package file")
    p.add_argument("--key", required=True, help="public (or private) key PEM")
    p.add_argument("--wrap-key", default=None)
    p.add_argument("--in", dest="infile", required=True, help="package file, or -")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("send", help="stream a package file to a server")
    p.add_argument("--to", required=True, metavar="HOST:PORT")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--rate", type=float, default=0, help="throttle, bytes/second")
    p.add_argument("--bucket", type=parse_size, default=1 << 20)
    p.set_defaults(func=_cmd_send)

    p = sub.add_parser("serve", help="run the verifying server")
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--key", required=True, help="public (or private) key PEM")
    p.add_argument("--wrap-key", default=None)
    p.add_argument("--reject-unsigned", action="store_true")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench", help="run the throughput/memory benchmark")
    p.add_argument("--sizes", default="1MiB,4MiB,16MiB,64MiB,256MiB")
    p.add_argument("--modes", default="unsigned,blocking,streaming_strict")
    p.add_argument("--rate", type=float, default=12_500_000,
                   help="egress throttle bytes/second; 0 disables")
    p.add_argument("--bucket", type=parse_size, default=1 << 20)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, default=20070917)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--plot-data", default=None, help="gnuplot-ready data file")
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering PNG charts next to the CSV")
    p.add_argument("--endpoint", default=None, metavar="HOST:PORT",
                   help="use an existing server instead of an in-process one")
    p.add_argument("--key", default=None, help="private key PEM (default: ephemeral)")
    p.add_argument("--wrap-key", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_IO
    except argparse.ArgumentTypeError as exc:
        _err(exc)
        return EXIT_USAGE
    except _IO_ERRORS as exc:
        _err(exc)
        return EXIT_IO
    except StreamSignError as exc:
        _err(exc)
        if args.command in ("verify", "send", "bench"):
            return EXIT_INVALID
        return EXIT_USAGE
    except ValueError as exc:
        _err(exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
