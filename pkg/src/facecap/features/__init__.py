from .backbones import (ConstantBackbone, PixelProjectionBackbone, SmallCNNBackbone, VggEBackbone,
                        VisualBackbone, extract_visual_features, get_backbone)
from .encoding import build_facial_encoding
from .faces import (DlibCnnDetector, FixedBoxDetector, HaarCascadeDetector, MarkerDetector, detect_faces, get_detector,
                    load_image)
from .fer import (FerModel, FerModelConfig, FerNet, FerSplit, FerTrainConfig, accuracy, classify_face, classify_faces, drop_black,
                  extract_face_features, load_fer, prepare_fer_splits, read_fer2013, save_fer, train_fer)
from .store import ImageFeatures, extract_manifest, featurize_image, load_features, save_features
from .types import (ExpressionDistribution, FaceCrop, FaceFeatureBlock, FacialEncoding,
                    VisualFeatureMap)
