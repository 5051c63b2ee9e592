"""
Plotting utilities for training runs using matplotlib.
"""

from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402


def plot_learning_curve(evals: pd.DataFrame, label: str = "agent",
                        baseline: Optional[float] = None, ax: Optional[plt.Axes] = None) -> plt.Figure:
    """
    Plot evaluation return against environment steps.

    Args:
        evals: Evaluation records with step, eval_return_mean, eval_return_std
        label: Legend label
        baseline: Return before finetuning, drawn as a dashed horizontal line
        ax: Existing axes to draw into

    Returns:
        matplotlib Figure object
    """
    if ax is None:
        fig, ax = plt.subplots(figsize=(10, 6))
    else:
        fig = ax.figure

    steps = evals["step"].to_numpy()
    mean = evals["eval_return_mean"].to_numpy()
    std = evals["eval_return_std"].to_numpy()
    line, = ax.plot(steps, mean, linewidth=2, label=label)
    ax.fill_between(steps, mean - std, mean + std, color=line.get_color(), alpha=0.2)
    if baseline is not None:
        ax.axhline(y=baseline, color=line.get_color(), linestyle='--', alpha=0.8,
                   label=f'{label} before finetuning')

    ax.set_xlabel('Environment steps')
    ax.set_ylabel('Evaluation return')
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def plot_seed_curves(summary: pd.DataFrame, label: str = "agent") -> plt.Figure:
    """
    Plot the across-seed mean curve of a sweep with a one-std band.

    Args:
        summary: Sweep summary with step, return_mean, return_std columns
        label: Legend label

    Returns:
        matplotlib Figure object
    """
    fig, ax = plt.subplots(figsize=(10, 6))
    steps = summary["step"].to_numpy()
    mean = summary["return_mean"].to_numpy()
    std = summary["return_std"].to_numpy()
    ax.plot(steps, mean, 'b-', linewidth=2, label=f'{label} (mean over seeds)')
    ax.fill_between(steps, mean - std, mean + std, color='b', alpha=0.2)
    ax.set_xlabel('Environment steps')
    ax.set_ylabel('Evaluation return')
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def plot_critic_norms(runs: Dict[str, pd.DataFrame]) -> plt.Figure:
    """
    Compare critic weight norms across runs, e.g. Adam vs SGDC pretraining.

    Args:
        runs: Label -> evaluation records with step and critic_l2_norm

    Returns:
        matplotlib Figure object
    """
    fig, ax = plt.subplots(figsize=(10, 6))
    for label, evals in runs.items():
        ax.plot(evals["step"], evals["critic_l2_norm"], linewidth=2, label=label)
    ax.set_xlabel('Environment steps')
    ax.set_ylabel('Critic $L^2$ norm')
    ax.set_yscale('log')
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def plot_finetune_curves(curves: Dict[str, pd.DataFrame], baselines: Dict[str, float],
                         perturbation: Optional[Sequence[str]] = None) -> plt.Figure:
    """
    One learning curve per pretraining variant, each with its dashed baseline.

    Args:
        curves: Label -> evaluation records of the finetuning run
        baselines: Label -> evaluation return before finetuning
        perturbation: Optional description lines for the title

    Returns:
        matplotlib Figure object
    """
    fig, ax = plt.subplots(figsize=(10, 6))
    for label, evals in curves.items():
        plot_learning_curve(evals, label=label, baseline=baselines.get(label), ax=ax)
    title = 'Finetuning after handoff'
    if perturbation:
        title += '\n' + ', '.join(perturbation)
    ax.set_title(title)
    return fig


def final_returns(evals: pd.DataFrame, last: int = 1) -> float:
    """Mean of the last `last` evaluation means."""
    return float(np.mean(evals["eval_return_mean"].to_numpy()[-last:]))


def save_figure(fig: plt.Figure, path) -> None:
    """Write the figure to disk and release it."""
    fig.savefig(path, dpi=100, bbox_inches='tight')
    plt.close(fig)
