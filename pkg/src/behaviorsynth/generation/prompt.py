"""Prompt assembly: role, task, requirements, scene and data sections."""
from __future__ import annotations

from dataclasses import dataclass

from ..core import BehaviorDataset, DeviceDictionary, render_dataset_text, render_text
from ..errors import EmptyDataset, InvalidSpec
from ..ingest import CHARS_PER_TOKEN

ROLE = (
    "You're an IoT expert. You are very knowledgeable about user behavior and habits in smart homes. "
    "The user would like to ask you about the possible changes in user behavior sequence after the change "
    "of smart home user habits and environment."
)

TASK = (
    "The user will provide you with the user's previous life environment and the changed environment, "
    "the user's previous behavior sequence, and a set of devices and device states. And the user hope that "
    "you can use the devices and device states in the set to generate possible user behavior sequences "
    "after the environment changes based on the original user behavior sequence."
)

REQUIREMENTS = (
    "Please strictly follow the correspondence between the devices and device states in the set to generate. "
    "Do not generate device states that do not match the device.",
    "You can add some devices that users have not used before to better adapt to changes in the environment.",
    "Please modify or delete all unreasonable behaviors in the new environment.",
    "Please consider as many new devices as possible in the new environment.",
    "Please make sure that the generated sequence still contains 10 consecutive behaviors and there are "
    "forty elements in total.",
    "Please ensure that the total number of generated behavior sequences is roughly equal to the total "
    "number of original behavior sequences.",
    "Please make modifications in the original sequence. The generated new behavior sequence set is also "
    "in the format of [[...], [...], ...].",
)

SCENE_TEMPLATE = "The previous environment is {previous}.\nThe changed environment is {new}."
DATA_TEMPLATE = (
    "The user's previous sequence of behavior: {user_sequence}.\n"
    "The set of the possible device and device states: {device_control_dict}."
)
DATA_MARKER = "The user's previous sequence of behavior: "


@dataclass(frozen=True)
class SceneSpec:
    previous_env: str
    new_env: str

    def __post_init__(self):
        if not str(self.previous_env).strip() or not str(self.new_env).strip():
            raise InvalidSpec("both the previous and the changed environment must be non-empty")


@dataclass(frozen=True)
class PromptBundle:
    system_message: str
    user_message: str
    sequence_count: int

    def messages(self) -> list[dict]:
        return [{"role": "system", "content": self.system_message},
                {"role": "user", "content": self.user_message}]

    @property
    def estimated_tokens(self) -> float:
        return (len(self.system_message) + len(self.user_message)) / CHARS_PER_TOKEN

    def with_appendix(self, text: str) -> "PromptBundle":
        return PromptBundle(self.system_message, self.user_message + "\n\n" + text, self.sequence_count)


def system_message() -> str:
    reqs = "\n".join(f"{i}. {r}" for i, r in enumerate(REQUIREMENTS, start=1))
    return f"{ROLE}\n\n{TASK}\n\nRequirements:\n{reqs}"


def build_prompt(kept: BehaviorDataset, dictionary: DeviceDictionary, scene: SceneSpec) -> PromptBundle:
    if len(kept) == 0:
        raise EmptyDataset("no sequences to put in the prompt")
    user = (
        SCENE_TEMPLATE.format(previous=scene.previous_env.strip(), new=scene.new_env.strip())
        + "\n\n"
        + DATA_TEMPLATE.format(user_sequence=render_dataset_text(kept.sequences),
                               device_control_dict=dictionary.render_text())
    )
    return PromptBundle(system_message(), user, len(kept))


def chunk_prompts(kept: BehaviorDataset, dictionary: DeviceDictionary, scene: SceneSpec,
                  token_budget: float = 8000) -> list[PromptBundle]:
    """One prompt if it fits the budget, otherwise consecutive chunks that each fit.

    A single sequence that alone exceeds the budget still gets its own chunk.
    """
    whole = build_prompt(kept, dictionary, scene)
    if whole.estimated_tokens <= token_budget:
        return [whole]
    # prompt size is a fixed frame plus each rendering and its ", " separator
    frame = len(whole.system_message) + len(whole.user_message) - len(render_dataset_text(kept.sequences)) + 2
    budget_chars = token_budget * CHARS_PER_TOKEN
    groups: list[list] = [[]]
    used = frame
    for seq in kept.sequences:
        cost = len(render_text(seq)) + (2 if groups[-1] else 0)
        if groups[-1] and used + cost > budget_chars:
            groups.append([])
            used = frame
            cost = len(render_text(seq))
        groups[-1].append(seq)
        used += cost
    return [build_prompt(BehaviorDataset(tuple(g)), dictionary, scene) for g in groups]
