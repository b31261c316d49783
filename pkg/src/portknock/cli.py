"""Command line: ``portknock {gen-profile,knock,serve,beacon-show}``.

Exit codes: 0 ok, 2 bad input/config, 3 bind error, 4 beacon failure,
5 send failure.
"""

import argparse
import getpass
import logging
import os
import secrets
import signal
import sys

import tomli

from . import beacon as beacons
from . import chaoshash, schnorr
from .client import BeaconUnavailable, SendFailed, knock_crucible, knock_with_profile
from .crucible import CrucibleError, blake2b_keyed, generate_profile
from .profile import RESERVED_NAME, KdfParams, Profile, ProfileError
from .server import EXIT_BEACON, EXIT_CONFIG, EXIT_OK, ServerConfig, ServerStartupError, run

EXIT_SEND = 5

PASSWORD_WARNING = (
    "warning: a password given on the command line can end up in shell history "
    "and process listings; prefer the prompt or --password-stdin"
)


class UsageError(Exception):
    pass


def _err(msg):
    print(msg, file=sys.stderr)


def _add_kdf_flags(p):
    d = KdfParams()
    p.add_argument("--kdf-rounds", type=int, default=d.rounds)
    p.add_argument("--kdf-memory", type=int, default=d.memory_kib, help="KiB")
    p.add_argument("--kdf-parallelism", type=int, default=d.parallelism)
    p.add_argument("--kdf-salt", default=d.salt.decode())
    p.add_argument(
        "--legacy-key",
        action="store_true",
        help="use the last 22 chars of the encoded Argon2 string as key (old scripts)",
    )


def _add_beacon_flags(p):
    p.add_argument("--beacon-url", help=f"block API URL (env {beacons.URL_ENV})")
    p.add_argument("--beacon-file", help="saved API response to replay")
    p.add_argument("--beacon-timeout", type=float, default=10.0)


def _kdf(args):
    try:
        return KdfParams(
            args.kdf_rounds, args.kdf_memory, args.kdf_parallelism, args.kdf_salt.encode("utf-8")
        )
    except ProfileError as exc:
        raise UsageError(str(exc)) from exc


def _source(args):
    if args.beacon_file:
        return beacons.FileBeaconSource(args.beacon_file)
    url = args.beacon_url or os.environ.get(beacons.URL_ENV) or beacons.DEFAULT_URL
    return beacons.HttpBeaconSource(url, args.beacon_timeout)


def _password(args, stdin, confirm=False):
    if args.password_stdin:
        return stdin.readline().rstrip("\r\n")
    if args.password is not None:
        _err(PASSWORD_WARNING)
        return args.password
    pwd = getpass.getpass("Enter port knocking password: ")
    if confirm and getpass.getpass("Repeat password: ") != pwd:
        raise UsageError("passwords do not match")
    return pwd


# -- gen-profile -----------------------------------------------------------


def _parse_cmd_flag(text):
    name, sep, shell = text.partition("=")
    if not sep or not name:
        raise UsageError(f"--cmd expects NAME=SHELL, got {text!r}")
    return name, shell


def _prompt_commands(read):
    """The interactive loop: shell command, then its name; blank finishes."""
    commands = []
    while True:
        shell = read("Enter shell command to run on authentication, or hit enter to finish.\n")
        if shell == "":
            _err("Commands saved.")
            return commands
        while True:
            name = read("Enter a name for this command:\n")
            if name == RESERVED_NAME or not name:
                _err("Invalid command name.")
                continue
            if name in dict(commands):
                _err("Command name already used.")
                continue
            break
        commands.append((name, shell))


def cmd_gen_profile(args, stdin=sys.stdin, read=input):
    commands = [_parse_cmd_flag(c) for c in args.cmd]
    rng = secrets.SystemRandom()
    port = args.port or rng.randrange(1024, 65536)
    if args.scheme == "crucible":
        pwd = _password(args, stdin, confirm=not args.cmd)
        if not pwd:
            raise UsageError("password must not be empty")
        commands = commands or _prompt_commands(read)
        _err("[+] Generating server profile")
        profile = generate_profile(pwd, commands, _kdf(args), legacy=args.legacy_key)
        profile.save(args.out)
        _err(f"[+] Profile written to {args.out}")
        return EXIT_OK

    commands = dict(commands or _prompt_commands(read))
    chaos_key = chaoshash.ChaosKey.generate(rng)
    if args.scheme == "chaos_beacon":
        profile = Profile(
            "chaos_beacon", commands, chaos_key=chaos_key, iterations=args.iterations, port=port
        )
        profile.save(args.out)
        _err(f"[+] Shared profile written to {args.out} (copy to client and server)")
        return EXIT_OK

    if not args.client_out:
        raise UsageError("--client-out is required for the nizkp scheme")
    _err(f"[+] Generating {args.p_bits}/{args.q_bits}-bit group parameters")
    group = schnorr.generate_params(args.p_bits, args.q_bits, rng)
    kp = schnorr.keygen(group, rng)
    profile = Profile(
        "nizkp",
        commands,
        group=group,
        public_key=kp.A,
        private_key=kp.a,
        user_id=args.user_id.encode("utf-8"),
        hash_name=args.hash,
        chaos_key=chaos_key if args.hash == "chaos" else None,
        iterations=args.iterations if args.hash == "chaos" else None,
        port=port,
    )
    profile.save(args.client_out)
    profile.public_only().save(args.out)
    _err(f"[+] Server profile {args.out}, client profile {args.client_out}")
    return EXIT_OK


# -- knock -----------------------------------------------------------------


def cmd_knock(args, stdin=sys.stdin, read=input, net=None):
    ip = args.ip or args.pos_ip
    if not ip:
        raise UsageError("server address required (--ip or positional)")
    command = args.command or args.pos_command
    progress = _err
    if args.profile:
        try:
            profile = Profile.load(args.profile)
        except ProfileError as exc:
            raise UsageError(str(exc)) from exc
        command = command or read("Enter command name:\n")
        try:
            knock_with_profile(ip, command, profile, _source(args), net=net, progress=progress)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from exc
        return EXIT_OK

    if args.pos_password is not None:
        _err(PASSWORD_WARNING)
        pwd = args.pos_password
    else:
        pwd = _password(args, stdin)
    if not pwd:
        raise UsageError("password must not be empty")
    command = command or read("Enter command name:\n")
    if not command:
        raise UsageError("command name must not be empty")
    knock_crucible(
        ip, command, _source(args), password=pwd, kdf=_kdf(args), legacy=args.legacy_key,
        net=net, progress=progress,
    )
    return EXIT_OK


# -- serve -----------------------------------------------------------------

CONFIG_KEYS = {
    "profile", "scheme", "beacon_url", "beacon_file", "long_wait", "short_wait",
    "dry_run", "log", "bind", "bootstrap_timeout", "http_timeout",
}


def load_config_file(path):
    try:
        with open(path, "rb") as f:
            data = tomli.load(f)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def build_server_config(args, environ=os.environ):
    """File values, overridden by flags; the env var only supplies the URL
    when neither does."""
    conf = load_config_file(args.config) if args.config else {}
    pick = lambda flag, key, default=None: flag if flag is not None else conf.get(key, default)
    profile_path = pick(args.profile, "profile")
    if not profile_path:
        raise UsageError("no profile given (--profile or config 'profile')")
    schedule = beacons.PollSchedule(
        float(pick(args.long_wait, "long_wait", 240.0)),
        float(pick(args.short_wait, "short_wait", 30.0)),
    )
    return ServerConfig(
        profile_path=profile_path,
        scheme=pick(args.scheme, "scheme"),
        beacon_url=pick(args.beacon_url, "beacon_url") or environ.get(beacons.URL_ENV),
        beacon_file=pick(args.beacon_file, "beacon_file"),
        schedule=schedule,
        mode="dry_run" if (args.dry_run or conf.get("dry_run", False)) else "execute",
        log_path=pick(args.log, "log"),
        bind_host=pick(args.bind, "bind", "0.0.0.0"),
        bootstrap_timeout=float(pick(args.bootstrap_timeout, "bootstrap_timeout", 60.0)),
        http_timeout=float(pick(args.beacon_timeout, "http_timeout", 10.0)),
    )


def cmd_serve(args, net=None, ready=None):
    config = build_server_config(args)
    config.net = net
    server = run(config)
    _err("[+] Starting server...")

    def on_signal(signum, frame):
        server.request_stop()

    old = None
    try:
        old = signal.signal(signal.SIGINT, on_signal), signal.signal(signal.SIGTERM, on_signal)
    except ValueError:
        pass  # not the main thread (embedded use)
    try:
        if ready:
            ready(server)
        server.wait()
    except KeyboardInterrupt:
        pass
    finally:
        _err("Exiting...")
        server.stop()
        if old is not None:
            signal.signal(signal.SIGINT, old[0])
            signal.signal(signal.SIGTERM, old[1])
    return EXIT_OK


# -- beacon-show -----------------------------------------------------------


def cmd_beacon_show(args):
    source = _source(args)
    block = source.fetch_latest()
    print(f"height {block.height}")
    if args.key:
        try:
            key = bytes.fromhex(args.key)
            value = beacons.derive_beacon(block, key, blake2b_keyed)
        except ValueError as exc:
            raise UsageError(f"bad --key: {exc}") from exc
        print(f"beacon {value.hex}")
    if args.chaos_key:
        try:
            key = chaoshash.ChaosKey.from_hex(args.chaos_key)
        except ValueError as exc:
            raise UsageError(f"bad --chaos-key: {exc}") from exc
        value = beacons.derive_beacon(block, key, chaoshash.chaos_keyed_hash)
        print(f"chaos-beacon {value.hex}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="portknock", description="Single-packet port knocking")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    g = sub.add_parser("gen-profile", help="create a profile")
    g.add_argument("--scheme", choices=("crucible", "chaos_beacon", "nizkp"), default="crucible")
    g.add_argument("--out", required=True, help="profile path (server copy for nizkp)")
    g.add_argument("--client-out", help="nizkp client profile path")
    g.add_argument("--password")
    g.add_argument("--password-stdin", action="store_true")
    g.add_argument("--cmd", action="append", default=[], metavar="NAME=SHELL")
    g.add_argument("--port", type=int, help="fixed port for nizkp/chaos_beacon (default random)")
    g.add_argument("--iterations", type=int, default=chaoshash.DEFAULT_ITERATIONS)
    g.add_argument("--p-bits", type=int, default=2048)
    g.add_argument("--q-bits", type=int, default=256)
    g.add_argument("--hash", choices=("chaos", "blake2b"), default="chaos")
    g.add_argument("--user-id", default="user")
    _add_kdf_flags(g)

    k = sub.add_parser("knock", help="send one knock")
    k.add_argument("pos_ip", nargs="?", metavar="IP")
    k.add_argument("pos_password", nargs="?", metavar="PASSWORD")
    k.add_argument("pos_command", nargs="?", metavar="COMMAND")
    k.add_argument("--ip")
    k.add_argument("--password")
    k.add_argument("--password-stdin", action="store_true")
    k.add_argument("--command")
    k.add_argument("--profile", help="client profile (nizkp / chaos_beacon only)")
    _add_kdf_flags(k)
    _add_beacon_flags(k)

    s = sub.add_parser("serve", help="run the knock daemon")
    s.add_argument("--config")
    s.add_argument("--profile")
    s.add_argument("--scheme", choices=("crucible", "chaos_beacon", "nizkp"))
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--log", help="event log path ('-' for stdout)")
    s.add_argument("--bind")
    s.add_argument("--long-wait", type=float)
    s.add_argument("--short-wait", type=float)
    s.add_argument("--bootstrap-timeout", type=float)
    s.add_argument("--beacon-url")
    s.add_argument("--beacon-file")
    s.add_argument("--beacon-timeout", type=float)

    b = sub.add_parser("beacon-show", help="print the latest block and derived beacon")
    b.add_argument("--key", help="crucible knock key (hex)")
    b.add_argument("--chaos-key", help="chaos hash key (hex fixed point)")
    _add_beacon_flags(b)
    return parser


def main(argv=None, stdin=None, read=None, net=None, ready=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    stdin = stdin or sys.stdin
    read = read or input
    try:
        if args.subcommand == "gen-profile":
            return cmd_gen_profile(args, stdin, read)
        if args.subcommand == "knock":
            return cmd_knock(args, stdin, read, net)
        if args.subcommand == "serve":
            return cmd_serve(args, net, ready)
        return cmd_beacon_show(args)
    except (UsageError, ProfileError, CrucibleError, schnorr.SchnorrError) as exc:
        _err(f"error: {exc}")
        return EXIT_CONFIG
    except ServerStartupError as exc:
        _err(f"error: {exc}")
        return exc.code
    except (BeaconUnavailable, beacons.BeaconError) as exc:
        _err(f"error: beacon unavailable: {exc}")
        return EXIT_BEACON
    except SendFailed as exc:
        _err(f"error: send failed: {exc}")
        return EXIT_SEND
    except (EOFError, KeyboardInterrupt):
        _err("aborted")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
