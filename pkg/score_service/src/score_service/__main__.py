"""CLI entry point: ``python -m score_service`` or the score-service script."""
import argparse

from .app import ServiceConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="score-service",
                                     description="Serve noise predictions over HTTP")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8321)
    parser.add_argument("--params", default=None,
                        help="mock backend mu-parameter JSON file (defaults built in)")
    parser.add_argument("--schedule", default="cosine", choices=["cosine", "linear"])
    parser.add_argument("--external", default=None,
                        help="module:attribute implementing the predict contract")
    args = parser.parse_args(argv)
    serve(ServiceConfig(params_path=args.params, schedule_kind=args.schedule,
                        external=args.external), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
