# modules/workflow.py

import logging
from typing import Any, Dict, List, Optional

import numpy as np
from langgraph.graph import END, StateGraph
from pydantic import BaseModel, ConfigDict

from config.app_config import AppConfig
from config.model_config import EncoderConfig
from config.run_config import RunConfig
from config.train_config import Objective, Task, TrainConfig, TrainRecipes
from modules.checkpoint import load_checkpoint, save_checkpoint
from modules.data_manager import (SentencePair, Vocab, encode_pairs, load_nli, load_stsb,
                                  read_sentences, tokenize_batch, write_embeddings)
from modules.encoder import ParamCount, param_count
from modules.errors import ConfigurationError, SentenceSimError
from modules.evaluation import EvalReport, SuiteReport, evaluate_sts, evaluate_suite, write_report
from modules.siamese import SiameseModel, build_model, embed_sentences
from modules.training import LossRecord, Trainer, write_loss_log
from modules.validator import DataValidator

logger = logging.getLogger(__name__)


class WorkflowState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    # inputs
    config_path: Optional[str] = None
    task: Optional[Task] = None
    resume: Optional[str] = None
    checkpoint_path: Optional[str] = None
    out: Optional[str] = None
    log: Optional[str] = None
    data_paths: List[str] = []
    report_path: Optional[str] = None
    input_path: Optional[str] = None
    output_path: Optional[str] = None

    # intermediate
    run_config: Optional[RunConfig] = None
    train_config: Optional[TrainConfig] = None
    vocab: Optional[Vocab] = None
    model: Optional[SiameseModel] = None
    train_pairs: List[SentencePair] = []
    dev_pairs: List[SentencePair] = []
    eval_sets: Dict[str, List[SentencePair]] = {}
    sentences: List[str] = []

    # results
    records: List[LossRecord] = []
    epoch_losses: List[float] = []
    report: Optional[EvalReport] = None
    suite: Optional[SuiteReport] = None
    skipped: int = 0
    embedded: int = 0
    error: Optional[str] = None
    exit_code: int = AppConfig.EXIT_OK
    completed: bool = False


def _failure(step: str, e: SentenceSimError) -> Dict[str, Any]:
    logger.error("%s failed: %s", step, e)
    return {'error': f"{step} failed: {str(e)}", 'exit_code': e.exit_code}


class WorkflowManager:
    """langgraph pipelines behind the train, eval, embed and init commands"""

    def __init__(self):
        self.train_graph = self.setup_workflow([
            ("validate", self.validate_step),
            ("load_data", self.load_data_step),
            ("build_model", self.build_model_step),
            ("fine_tune", self.fine_tune_step),
            ("save", self.save_step),
        ])
        self.eval_graph = self.setup_workflow([
            ("load_checkpoint", self.load_checkpoint_step),
            ("load_eval_data", self.load_eval_data_step),
            ("evaluate", self.evaluate_step),
        ])
        self.embed_graph = self.setup_workflow([
            ("load_checkpoint", self.load_checkpoint_step),
            ("read_sentences", self.read_sentences_step),
            ("embed", self.embed_step),
        ])
        self.init_graph = self.setup_workflow([
            ("load_config", self.load_config_step),
            ("load_data", self.load_init_data_step),
            ("build_model", self.build_model_step),
            ("save", self.save_step),
        ])

    @staticmethod
    def route(state: WorkflowState) -> str:
        return "stop" if state.error else "continue"

    def setup_workflow(self, steps):
        """Chain the steps; any step that records an error ends the run"""
        workflow = StateGraph(state_schema=WorkflowState)
        for name, step in steps:
            workflow.add_node(name, step)
        workflow.set_entry_point(steps[0][0])
        for (name, _), (next_name, _) in zip(steps, steps[1:]):
            workflow.add_conditional_edges(name, self.route, {"continue": next_name, "stop": END})
        workflow.add_conditional_edges(steps[-1][0], self.route, {"continue": "finish", "stop": END})
        workflow.add_node("finish", lambda state: {'completed': True})
        workflow.add_edge("finish", END)
        return workflow.compile()

    @staticmethod
    def run_workflow(graph, state: WorkflowState) -> WorkflowState:
        result = graph.invoke(state)
        return result if isinstance(result, WorkflowState) else WorkflowState.model_validate(result)

    # training

    def validate_step(self, state: WorkflowState):
        try:
            run_config = RunConfig.from_file(state.config_path)
            out = state.out or run_config.output.checkpoint
            log = state.log or run_config.output.loss_log
            errors = DataValidator.validate_train_run(run_config, out, log, state.resume)
            if errors:
                raise ConfigurationError("; ".join(errors))
        except SentenceSimError as e:
            return _failure("Validation", e)
        return {'run_config': run_config, 'out': out, 'log': log}

    def load_data_step(self, state: WorkflowState):
        try:
            data = state.run_config.data
            if state.task == Task.NLI:
                pairs, skipped = load_nli(data.train_path)
            else:
                pairs, skipped = load_stsb(data.train_path), 0
            if not pairs:
                raise ConfigurationError(f"No training pairs in {data.train_path}")
            objective = TrainRecipes.TASK_OBJECTIVE[state.task]
            if not DataValidator.validate_objective_fit(pairs, objective):
                raise ConfigurationError(f"Task '{state.task.value}' needs {objective.value} targets")
            dev_pairs = load_stsb(data.dev_path) if data.dev_path else []
        except SentenceSimError as e:
            return _failure("Loading data", e)
        logger.info("Loaded %d training pairs (%d skipped), %d dev pairs", len(pairs), skipped, len(dev_pairs))
        return {'train_pairs': pairs, 'dev_pairs': dev_pairs, 'skipped': skipped}

    def _vocab_for(self, run_config: RunConfig, pairs: List[SentencePair]) -> Vocab:
        data = run_config.data
        if data.vocab_path:
            return Vocab.from_file(data.vocab_path, lowercase=data.lowercase)
        sentences = [s for p in pairs for s in (p.sentence_a, p.sentence_b)]
        return Vocab.build(sentences, max_size=run_config.encoder.vocab_size, lowercase=data.lowercase)

    def build_model_step(self, state: WorkflowState):
        try:
            run_config = state.run_config
            if state.resume:
                loaded = load_checkpoint(state.resume)
                model, vocab = loaded.model, loaded.vocab
                if model.encoder.config != run_config.encoder or model.head.config != run_config.head:
                    logger.warning("Resuming %s: its encoder/head settings replace the run config's", state.resume)
            else:
                vocab = self._vocab_for(run_config, state.train_pairs)
                model = build_model(run_config.encoder, run_config.head)
            if not DataValidator.validate_vocab_fit(vocab, model.encoder.config):
                raise ConfigurationError(
                    f"Vocabulary has {len(vocab)} entries, encoder vocab_size is {model.encoder.config.vocab_size}")
            task = state.task or Task.STSB
            if TrainRecipes.TASK_OBJECTIVE[task] == Objective.CLASSIFICATION:
                model.ensure_classifier()
            overrides = run_config.train.model_dump(exclude_none=True)
            train_config = TrainRecipes.for_task(task, model.head.kind, **overrides)
        except SentenceSimError as e:
            return _failure("Building model", e)
        return {'model': model, 'vocab': vocab, 'train_config': train_config}

    def fine_tune_step(self, state: WorkflowState):
        try:
            t_max = state.model.encoder.config.max_len
            dataset = encode_pairs(state.vocab, state.train_pairs, t_max)
            dev = encode_pairs(state.vocab, state.dev_pairs, t_max) if state.dev_pairs else None
            trainer = Trainer(state.model, TrainRecipes.TASK_OBJECTIVE[state.task], state.train_config)
            result = trainer.run(dataset, dev)
        except SentenceSimError as e:
            return _failure("Training", e)
        return {'records': result.records, 'epoch_losses': result.epoch_losses}

    def save_step(self, state: WorkflowState):
        try:
            save_checkpoint(state.model, state.vocab, state.train_config, state.out)
            if state.log:
                write_loss_log(state.records, state.log)
        except SentenceSimError as e:
            return _failure("Saving", e)
        except OSError as e:
            return {'error': f"Saving failed: {str(e)}", 'exit_code': AppConfig.EXIT_INPUT}
        return {}

    # untrained checkpoint

    def load_config_step(self, state: WorkflowState):
        try:
            run_config = RunConfig.from_file(state.config_path)
            out = state.out or run_config.output.checkpoint
            if not DataValidator.validate_writable(out):
                raise ConfigurationError(f"--out path is missing or not writable: {out}")
        except SentenceSimError as e:
            return _failure("Validation", e)
        return {'run_config': run_config, 'out': out, 'log': None}

    def load_init_data_step(self, state: WorkflowState):
        """Training pairs only seed the vocabulary when no vocab file is given"""
        data = state.run_config.data
        if data.vocab_path or not data.train_path:
            return {}
        try:
            if state.task == Task.NLI:
                pairs, _ = load_nli(data.train_path)
            else:
                pairs = load_stsb(data.train_path)
        except SentenceSimError as e:
            return _failure("Loading data", e)
        return {'train_pairs': pairs}

    # evaluation and embedding

    def load_checkpoint_step(self, state: WorkflowState):
        try:
            loaded = load_checkpoint(state.checkpoint_path)
        except SentenceSimError as e:
            return _failure("Loading checkpoint", e)
        return {'model': loaded.model, 'vocab': loaded.vocab, 'train_config': loaded.train_config}

    def load_eval_data_step(self, state: WorkflowState):
        try:
            eval_sets = {path: load_stsb(path) for path in state.data_paths}
        except SentenceSimError as e:
            return _failure("Loading evaluation data", e)
        return {'eval_sets': eval_sets}

    def evaluate_step(self, state: WorkflowState):
        try:
            if len(state.eval_sets) == 1:
                (pairs,) = state.eval_sets.values()
                report, suite = evaluate_sts(state.model, pairs, state.vocab), None
                if state.report_path:
                    write_report(report, state.report_path)
            else:
                report, suite = None, evaluate_suite(state.model, state.eval_sets, state.vocab)
                if state.report_path:
                    write_report(suite, state.report_path)
        except SentenceSimError as e:
            return _failure("Evaluation", e)
        return {'report': report, 'suite': suite}

    def read_sentences_step(self, state: WorkflowState):
        try:
            sentences, skipped = read_sentences(state.input_path)
        except SentenceSimError as e:
            return _failure("Reading sentences", e)
        return {'sentences': sentences, 'skipped': skipped}

    def embed_step(self, state: WorkflowState):
        try:
            dim = state.model.hidden_dim
            if state.sentences:
                batch = tokenize_batch(state.vocab, state.sentences, state.model.encoder.config.max_len)
                vectors = embed_sentences(state.model, batch)
            else:
                vectors = np.zeros((0, dim))
            write_embeddings(vectors, state.output_path)
        except SentenceSimError as e:
            return _failure("Embedding", e)
        except OSError as e:
            return {'error': f"Embedding failed: {str(e)}", 'exit_code': AppConfig.EXIT_INPUT}
        return {'embedded': len(state.sentences)}

    # commands

    def train(self, config_path: str, task: Task, out: Optional[str] = None, log: Optional[str] = None,
              resume: Optional[str] = None) -> WorkflowState:
        state = WorkflowState(config_path=config_path, task=Task(task), out=out, log=log, resume=resume)
        return self.run_workflow(self.train_graph, state)

    def init(self, config_path: str, out: Optional[str] = None, task: Task = Task.STSB) -> WorkflowState:
        state = WorkflowState(config_path=config_path, task=Task(task), out=out)
        return self.run_workflow(self.init_graph, state)

    def evaluate(self, checkpoint_path: str, data_paths: List[str],
                 report_path: Optional[str] = None) -> WorkflowState:
        state = WorkflowState(checkpoint_path=checkpoint_path, data_paths=list(data_paths),
                              report_path=report_path)
        return self.run_workflow(self.eval_graph, state)

    def embed(self, checkpoint_path: str, input_path: str, output_path: str) -> WorkflowState:
        state = WorkflowState(checkpoint_path=checkpoint_path, input_path=input_path, output_path=output_path)
        return self.run_workflow(self.embed_graph, state)

    @staticmethod
    def params(config_path: str) -> ParamCount:
        encoder: EncoderConfig = RunConfig.from_file(config_path).encoder
        return param_count(encoder)
