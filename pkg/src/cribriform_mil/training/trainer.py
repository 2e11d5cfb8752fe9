# Copyright 2025 The Cribriform MIL Authors

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
from __future__ import annotations

import copy
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from cribriform_mil.evaluation.metrics import classify, cohens_kappa
from cribriform_mil.losses import WeightedBCELoss, pos_weight_from_labels
from cribriform_mil.models import (
    OptimizerKind,
    PatchClassifier,
    SlideMIL,
    adamw_step,
    make_onecycle_scheduler,
    make_optimizer,
    radam_step,
)
from cribriform_mil.utils import make_rng, make_torch_generator

from .config import TrainRunConfig
from .data import SlideBags, select_training_bag

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    holdout_kappa: float
    lr: float


def holdout_kappa(probabilities, labels, operating_point: float = 0.5) -> float:
    """Cohen's kappa of thresholded probabilities against labels (NaN when undefined, silently)."""
    if len(labels) == 0:
        return math.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cohens_kappa(classify(probabilities, operating_point), np.asarray(labels, dtype=np.int64))


def select_best_epoch(kappas: list[float]) -> int:
    """1-based epoch with the highest kappa; NaN ranks lowest and ties go to the earliest epoch (0 if none)."""
    best_epoch, best = 0, -math.inf
    for epoch, kappa in enumerate(kappas, start=1):
        value = -math.inf if math.isnan(kappa) else kappa
        if best_epoch == 0 or value > best:
            best_epoch, best = epoch, value
    return best_epoch


class PatchClassifierTrainer:
    r"""Fully supervised step-one training of the patch classifier.

    Each epoch draws one precomputed descriptor view per patch, shuffles the patches into batches, and
    minimises the positive-weighted BCE with AdamW under a one-cycle learning-rate schedule. After every
    epoch the holdout patch kappa is computed; the weights of the best epoch are restored at the end.
    """

    def __init__(
        self,
        model: PatchClassifier,
        train_descriptors: np.ndarray,
        train_labels: np.ndarray,
        holdout_descriptors: np.ndarray,
        holdout_labels: np.ndarray,
        cfg: TrainRunConfig,
        fold: int = 0,
    ):
        assert train_descriptors.ndim == 3, "training descriptors must be shaped (views, patches, features)"
        self.model = model
        self.cfg = cfg
        self.fold = fold
        self.train_descriptors = train_descriptors
        self.train_labels = np.asarray(train_labels, dtype=np.float32)
        self.holdout_descriptors = torch.as_tensor(holdout_descriptors, dtype=torch.float32)
        self.holdout_labels = np.asarray(holdout_labels, dtype=np.int64)
        self.loss = WeightedBCELoss(pos_weight_from_labels(train_labels))
        self.optimizer = make_optimizer(
            model.parameters(), OptimizerKind.ADAMW, cfg.patch_peak_lr, cfg.patch_weight_decay
        )
        self.current_epoch = 0
        self.num_train_epochs = cfg.patch_epochs
        self.num_epoch_steps = math.ceil(train_descriptors.shape[1] / cfg.patch_batch)
        self.num_training_steps = self.num_epoch_steps * self.num_train_epochs
        self.scheduler = None
        if self.num_training_steps > 0:
            self.scheduler = make_onecycle_scheduler(
                self.optimizer,
                total_steps=self.num_training_steps,
                steps_per_epoch=self.num_epoch_steps,
                initial_lr=cfg.patch_initial_lr,
                peak_lr=cfg.patch_peak_lr,
                final_lr=cfg.patch_final_lr,
            )
        self.history: list[EpochRecord] = []
        self.best_epoch = 0
        self.best_kappa = math.nan

    @property
    def lr(self):
        for g in self.optimizer.optimizer.param_groups:
            return g["lr"]

    def epoch_loader(self, epoch: int) -> DataLoader:
        views = make_rng(self.cfg.seed, "patch-views", self.fold, epoch).integers(
            0, self.train_descriptors.shape[0], size=self.train_descriptors.shape[1]
        )
        x = self.train_descriptors[views, np.arange(self.train_descriptors.shape[1])]
        dataset = TensorDataset(torch.as_tensor(x, dtype=torch.float32), torch.as_tensor(self.train_labels))
        generator = make_torch_generator(self.cfg.seed, "patch-batches", self.fold, epoch)
        return DataLoader(dataset, batch_size=self.cfg.patch_batch, shuffle=True, generator=generator)

    def training_step(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        self.optimizer.optimizer.zero_grad(set_to_none=True)
        loss = self.loss(self.model(x), y)
        loss.backward()
        adamw_step(self.optimizer)
        self.scheduler.step()
        return loss

    @torch.no_grad()
    def evaluate(self) -> float:
        self.model.eval()
        probabilities = self.model(self.holdout_descriptors).numpy() if len(self.holdout_labels) else np.zeros(0)
        return holdout_kappa(probabilities, self.holdout_labels, self.cfg.operating_point)

    def train(self) -> PatchClassifier:
        best_state = copy.deepcopy(self.model.state_dict())
        kappas = []
        for epoch in range(1, self.num_train_epochs + 1):
            self.model.train()
            epoch_bar = tqdm(
                range(self.num_epoch_steps), desc=f"Fold {self.fold} patch epoch {epoch}", leave=False, unit="batch"
            )
            losses = []
            for x, y in self.epoch_loader(epoch):
                loss = self.training_step(x, y)
                losses.append(loss.item())
                epoch_bar.set_postfix({"batch_loss": loss.item(), "lr": self.lr})
                epoch_bar.update()
            epoch_bar.close()
            kappa = self.evaluate()
            kappas.append(kappa)
            self.history.append(EpochRecord(epoch, float(np.mean(losses)), kappa, self.lr))
            if select_best_epoch(kappas) == epoch:
                best_state = copy.deepcopy(self.model.state_dict())
            self.current_epoch = epoch
            logger.info(f"Fold {self.fold} patch epoch {epoch}: loss {np.mean(losses):.4f}, holdout kappa {kappa:.4f}.")
        if kappas:
            self.best_epoch = select_best_epoch(kappas)
            self.best_kappa = kappas[self.best_epoch - 1]
            self.model.load_state_dict(best_state)
        self.model.eval()
        return self.model


class SlideMILTrainer:
    r"""Weakly supervised step-two training of the slide-level MIL model.

    One bag per update (RAdam, constant learning rate). Per epoch and slide: one scan chosen at random,
    one of the two non-overlapping patch subsets (alternating by epoch), at most `max_bag_size` patches, and
    one descriptor view per patch. Holdout slides are scored on their primary scan with every patch and the
    identity view; the epoch with the highest holdout kappa is retained.
    """

    def __init__(
        self,
        model: SlideMIL,
        train_slides: list[SlideBags],
        holdout_slides: list[SlideBags],
        cfg: TrainRunConfig,
        fold: int = 0,
    ):
        self.model = model
        self.cfg = cfg
        self.fold = fold
        self.train_slides = train_slides
        self.holdout_slides = [s for s in holdout_slides if s.primary.n_patches > 0]
        for slide in holdout_slides:
            if slide.primary.n_patches == 0:
                warnings.warn(f"Holdout slide '{slide.slide_id}' has no tissue patches and is not scored.")
        self.loss = WeightedBCELoss(pos_weight_from_labels([s.bag_label for s in train_slides]))
        self.optimizer = make_optimizer(model.parameters(), OptimizerKind.RADAM, cfg.slide_lr, cfg.slide_weight_decay)
        self.model.set_dropout_generator(make_torch_generator(cfg.seed, "dropout", fold))
        self.num_train_epochs = cfg.slide_epochs
        self.current_epoch = 0
        self.history: list[EpochRecord] = []
        self.best_epoch = 0
        self.best_kappa = math.nan

    @property
    def lr(self):
        for g in self.optimizer.optimizer.param_groups:
            return g["lr"]

    def training_step(self, bag: torch.Tensor, label: float) -> torch.Tensor:
        self.optimizer.optimizer.zero_grad(set_to_none=True)
        probability, _ = self.model(bag)
        loss = self.loss(probability.reshape(1), torch.tensor([label], dtype=probability.dtype))
        loss.backward()
        radam_step(self.optimizer)
        return loss

    @torch.no_grad()
    def predict_holdout(self) -> np.ndarray:
        self.model.eval()
        scores = []
        for slide in self.holdout_slides:
            probability, _ = self.model(torch.as_tensor(slide.primary.descriptors[0], dtype=torch.float32))
            scores.append(float(probability))
        return np.array(scores)

    def evaluate(self) -> float:
        labels = [s.bag_label for s in self.holdout_slides]
        return holdout_kappa(self.predict_holdout(), labels, self.cfg.operating_point)

    def train(self) -> SlideMIL:
        best_state = copy.deepcopy(self.model.state_dict())
        kappas = []
        for epoch in range(1, self.num_train_epochs + 1):
            self.model.train()
            order = make_rng(self.cfg.seed, "slide-order", self.fold, epoch).permutation(len(self.train_slides))
            epoch_bar = tqdm(order, desc=f"Fold {self.fold} slide epoch {epoch}", leave=False, unit="bag")
            losses = []
            for index in epoch_bar:
                slide = self.train_slides[index]
                selected = select_training_bag(slide, epoch, self.fold, self.cfg.seed, self.cfg.max_bag_size)
                if selected is None:
                    warnings.warn(f"Slide '{slide.slide_id}' has an empty bag and is skipped.")
                    continue
                bag, _ = selected
                loss = self.training_step(torch.as_tensor(bag, dtype=torch.float32), float(slide.bag_label))
                losses.append(loss.item())
                epoch_bar.set_postfix({"bag_loss": loss.item(), "lr": self.lr})
            kappa = self.evaluate()
            kappas.append(kappa)
            mean_loss = float(np.mean(losses)) if losses else math.nan
            self.history.append(EpochRecord(epoch, mean_loss, kappa, self.lr))
            if select_best_epoch(kappas) == epoch:
                best_state = copy.deepcopy(self.model.state_dict())
            self.current_epoch = epoch
            logger.info(f"Fold {self.fold} slide epoch {epoch}: loss {mean_loss:.4f}, holdout kappa {kappa:.4f}.")
        if kappas:
            self.best_epoch = select_best_epoch(kappas)
            self.best_kappa = kappas[self.best_epoch - 1]
            self.model.load_state_dict(best_state)
        self.model.set_dropout_generator(None)
        self.model.eval()
        return self.model
