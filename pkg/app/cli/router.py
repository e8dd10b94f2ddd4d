import argparse

from app.cli.commands import cross_eval, evaluate, gradcheck, kfold, predict, synth_data, train
from app.utils.error import InvalidInputError

COMMANDS = [train, evaluate, gradcheck, synth_data, predict, kfold, cross_eval]


class CommandParser(argparse.ArgumentParser):
    """Usage errors surface as InvalidInputError so they share the validation exit code."""

    def error(self, message: str):
        raise InvalidInputError(f"{self.prog}: {message}")


def build_parser() -> CommandParser:
    parser = CommandParser(prog="gruaunet", description="Fingerprint presentation attack detection")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser
