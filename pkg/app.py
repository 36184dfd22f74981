# app.py

import argparse
import logging
import sys
from typing import List, Optional

from config.app_config import AppConfig
from config.train_config import Task
from modules.errors import SentenceSimError
from modules.workflow import WorkflowManager, WorkflowState

logger = logging.getLogger("sentsim")


class SentenceSimApp:
    def __init__(self):
        self.workflow_manager = WorkflowManager()

    @staticmethod
    def finish(state: WorkflowState) -> int:
        if state.error:
            print(f"error: {state.error}", file=sys.stderr)
            return state.exit_code
        return AppConfig.EXIT_OK

    def handle_train(self, args) -> int:
        state = self.workflow_manager.train(args.config, Task(args.task), out=args.out, log=args.log,
                                            resume=args.resume)
        if not state.error:
            epochs = [r for r in state.records if r.kind == "epoch"]
            print(f"trained {len(epochs)} epochs, {len(state.records) - len(epochs)} steps -> {state.out}")
        return self.finish(state)

    def handle_init(self, args) -> int:
        state = self.workflow_manager.init(args.config, out=args.out)
        if not state.error:
            print(f"wrote untrained checkpoint {state.out}")
        return self.finish(state)

    def handle_eval(self, args) -> int:
        state = self.workflow_manager.evaluate(args.ckpt, args.data, report_path=args.report)
        if state.report is not None:
            print(state.report.rendered)
        elif state.suite is not None:
            for name, report in state.suite.tasks.items():
                print(f"{name}\t{report.rendered}")
            print(f"{AppConfig.REPORT_AVERAGE_LABEL}\t{state.suite.rendered_average}")
        return self.finish(state)

    def handle_embed(self, args) -> int:
        state = self.workflow_manager.embed(args.ckpt, args.input, args.output)
        if not state.error and state.skipped:
            print(f"skipped {state.skipped} empty lines", file=sys.stderr)
        return self.finish(state)

    def handle_params(self, args) -> int:
        counts = self.workflow_manager.params(args.config)
        for name, value in counts.model_dump().items():
            print(f"{name}\t{value}")
        return AppConfig.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentsim", description="Siamese sentence-embedding toolkit")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="fine-tune a siamese model")
    train.add_argument("--config", required=True, help="run config (JSON)")
    train.add_argument("--task", required=True, choices=[t.value for t in Task])
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--out", help="checkpoint to write (default: output.checkpoint)")
    train.add_argument("--log", help="loss log CSV (default: output.loss_log)")
    train.set_defaults(handler=SentenceSimApp.handle_train)

    init = commands.add_parser("init", help="write an untrained checkpoint")
    init.add_argument("--config", required=True)
    init.add_argument("--out", help="checkpoint to write (default: output.checkpoint)")
    init.set_defaults(handler=SentenceSimApp.handle_init)

    evaluate = commands.add_parser("eval", help="score STS pairs by cosine similarity")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--data", required=True, action="append", help="scored pairs (TSV); repeatable")
    evaluate.add_argument("--report", help="JSON report path")
    evaluate.set_defaults(handler=SentenceSimApp.handle_eval)

    embed = commands.add_parser("embed", help="write one vector per input sentence")
    embed.add_argument("--ckpt", required=True)
    embed.add_argument("--input", required=True)
    embed.add_argument("--output", required=True)
    embed.set_defaults(handler=SentenceSimApp.handle_embed)

    params = commands.add_parser("params", help="parameter count breakdown of a config's encoder")
    params.add_argument("--config", required=True)
    params.set_defaults(handler=SentenceSimApp.handle_params)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return AppConfig.EXIT_OK if e.code == 0 else AppConfig.EXIT_INPUT

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        app = SentenceSimApp()
        return args.handler(app, args)
    except SentenceSimError as e:
        logger.error("%s", e)
        print(f"error: {str(e)}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
