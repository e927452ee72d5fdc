"""sickfuse: multimodal cybersickness severity prediction at desk scale.

Pipeline: synthetic or recorded session logs -> ingestion/alignment ->
normalization, optical flow and stereo disparity -> labeled 11 s windows ->
deep fusion network (3D-CNN + time-distributed CNN-LSTM branches, late
fusion) trained under k-fold cross-validation -> metrics and paired-sample
statistics. All numerics run on the in-repo tensor core with reverse-mode
autodiff; hot kernels have a compiled core with a numpy fallback.
"""

__version__ = "0.1.0"
