# modules/validator.py

import os
from typing import List, Optional, Sequence

from config.model_config import EncoderConfig
from config.run_config import RunConfig
from config.train_config import Objective
from modules.data_manager import SentencePair, Vocab


class DataValidator:
    @staticmethod
    def validate_readable(path: Optional[str]) -> bool:
        """Path names an existing, readable file"""
        return bool(path) and os.path.isfile(path) and os.access(path, os.R_OK)

    @staticmethod
    def validate_writable(path: Optional[str]) -> bool:
        """Path can be created: its nearest existing ancestor is a writable directory"""
        if not path:
            return False
        parent = os.path.dirname(os.path.abspath(path))
        while not os.path.exists(parent):
            parent = os.path.dirname(parent)
        return os.path.isdir(parent) and os.access(parent, os.W_OK)

    @staticmethod
    def validate_objective_fit(pairs: Sequence[SentencePair], objective: Objective) -> bool:
        """Every pair carries the target the objective trains on"""
        if objective == Objective.REGRESSION:
            return all(p.score is not None for p in pairs)
        return all(p.label is not None for p in pairs)

    @staticmethod
    def validate_vocab_fit(vocab: Vocab, config: EncoderConfig) -> bool:
        return len(vocab) <= config.vocab_size

    @staticmethod
    def validate_train_run(run_config: RunConfig, out: Optional[str], log: Optional[str],
                           resume: Optional[str] = None) -> Optional[List[str]]:
        """Check every path a training run touches before any step runs"""
        errors = []

        train_path = run_config.data.train_path
        if not train_path:
            errors.append("data.train_path is required")
        elif not DataValidator.validate_readable(train_path):
            errors.append(f"Training data not found: {train_path}")

        for label, path in (('data.dev_path', run_config.data.dev_path),
                            ('data.vocab_path', run_config.data.vocab_path),
                            ('--resume', resume)):
            if path and not DataValidator.validate_readable(path):
                errors.append(f"{label} not found: {path}")

        for label, path in (('--out', out), ('--log', log)):
            if not path:
                errors.append(f"{label} path is required")
            elif not DataValidator.validate_writable(path):
                errors.append(f"{label} path is not writable: {path}")

        return errors if errors else None
