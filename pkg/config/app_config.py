# config/app_config.py

class AppConfig:
    # Reserved vocabulary ids (Static)
    PAD_TOKEN = "[PAD]"
    CLS_TOKEN = "[CLS]"
    SEP_TOKEN = "[SEP]"
    UNK_TOKEN = "[UNK]"
    PAD_ID = 0
    CLS_ID = 1
    SEP_ID = 2
    UNK_ID = 3
    RESERVED_TOKENS = [PAD_TOKEN, CLS_TOKEN, SEP_TOKEN, UNK_TOKEN]

    # NLI labels (fixed mapping shared by loaders, classifier and checkpoints)
    NLI_LABELS = {
        'entailment': 0,
        'contradiction': 1,
        'neutral': 2
    }
    NLI_SKIP_LABEL = "-"

    # STS gold score range
    MIN_SCORE = 0.0
    MAX_SCORE = 5.0

    # CLI exit codes
    EXIT_OK = 0
    EXIT_INPUT = 2
    EXIT_DIVERGENCE = 3
    EXIT_UNDEFINED_METRIC = 4

    # Checkpoint format
    CHECKPOINT_MAGIC = b"MSIM"
    CHECKPOINT_VERSION = 1

    # Parameter initialization
    INIT_STDDEV = 0.02
    INIT_TRUNCATION = 2.0
    LAYER_NORM_EPS = 1e-12

    # Report rendering
    REPORT_AVERAGE_LABEL = "Avg."
