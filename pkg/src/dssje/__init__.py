"""Deep symmetric structured joint embedding of images and fine-grained text."""
from .data import Caption, ClassSplitDataset, ImageFeature, WordVectors, load_dataset, load_word_vectors, save_dataset
from .encoders import EncoderSpec, ImageEncoder, build_text_encoder
from .evaluation import EvalReport, ap_at_50, caption_sweep, evaluate, retrieval_eval, zero_shot_accuracy
from .model import JointModel, MiniBatch, classify_image, classify_text, compatibility, objective
from .optim import RmsPropState, rmsprop_step
from .synthetic import generate_synthetic
from .tensor import Tensor, backward, no_grad
from .text import Alphabet, TextSequence, Vocabulary, detokenize, normalize_text, tokenize
from .train import TrainingConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
