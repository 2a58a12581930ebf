from ..errors import InputError
from .captioners import (CaptionModel, DualBranch, DualFaceAttModel, FaceCapModel, JointFaceAttModel,
                         StepOutput, build_model, dual_branch_step, face_row_mask)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (FACE_LOSS_VARIANTS, FACECAP_FAMILY, JOINT_FAMILY, VARIANTS, ModelConfig)
from .layers import (GateLSTM, InitMLP, SoftAttention, attention_penalty, dual_log_mixture,
                     dual_word_distribution, face_loss, init_hidden_mean, soft_attention, word_nll)


def facecap_lstm_step(lstm, w_prev, h_prev, c_prev, context, s=None):
    """One gated step on ``[w, c_hat, s]``; ``s`` must be given iff the cell takes it."""
    xs = {"word": w_prev, "context": context}
    if s is not None:
        xs["encoding"] = s
    if ("encoding" in lstm.inputs) != (s is not None):
        raise InputError("facial encoding must be supplied exactly when the cell injects it")
    return lstm(xs, h_prev, c_prev)


def joint_attend_step(att_lstm, mean_visual, h_l_prev, h_a_prev, c_a_prev, w_prev):
    return att_lstm({"mean_visual": mean_visual, "lang_hidden": h_l_prev, "word": w_prev}, h_a_prev, c_a_prev)


def joint_language_step(lang_lstm, face_context, visual_context, h_a, h_l_prev, c_l_prev):
    xs = {"visual_context": visual_context, "att_hidden": h_a}
    if face_context is not None:
        xs["face_context"] = face_context
    return lang_lstm(xs, h_l_prev, c_l_prev)
