from .bleu import bleu
from .cider import cider
from .external import ExternalResult, external_metric
from .report import EvalReport, evaluate
from .rouge import lcs_length, rouge_l, rouge_l_sentence
