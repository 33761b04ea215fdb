import json

import numpy as np
import pytest
import torch
from PIL import Image


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A small LLaVA-style checkpoint saved locally: 4 decoder layers,
    2 kv-heads x 16 = key width 32, 3x3 image patches (9 image tokens)."""
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import (
        CLIPImageProcessor,
        CLIPVisionConfig,
        LlamaConfig,
        LlavaConfig,
        LlavaForConditionalGeneration,
        LlavaProcessor,
        PreTrainedTokenizerFast,
    )

    path = tmp_path_factory.mktemp("checkpoint")
    vocab = {"<pad>": 0, "<s>": 1, "</s>": 2, "<unk>": 3, "<image>": 4}
    words = (
        "what is in the picture a cat dog red blue describe this briefly "
        "answer question color object scene count shape".split()
    )
    for i, word in enumerate(words):
        vocab[word] = 5 + i
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="<pad>",
        bos_token="<s>",
        eos_token="</s>",
        unk_token="<unk>",
        additional_special_tokens=["<image>"],
    )
    image_processor = CLIPImageProcessor(
        size={"shortest_edge": 30}, crop_size={"height": 30, "width": 30}
    )
    processor = LlavaProcessor(
        image_processor=image_processor,
        tokenizer=tokenizer,
        patch_size=10,
        vision_feature_select_strategy="default",
        image_token="<image>",
        num_additional_image_tokens=1,
    )
    processor.save_pretrained(path)

    vision = CLIPVisionConfig(
        hidden_size=32, intermediate_size=64, num_hidden_layers=2,
        num_attention_heads=2, image_size=30, patch_size=10, projection_dim=16,
    )
    text = LlamaConfig(
        hidden_size=64, intermediate_size=128, num_hidden_layers=4,
        num_attention_heads=4, num_key_value_heads=2,
        vocab_size=len(vocab) + 8, max_position_embeddings=128,
    )
    config = LlavaConfig(
        vision_config=vision,
        text_config=text,
        image_token_index=vocab["<image>"],
        vision_feature_select_strategy="default",
        vision_feature_layer=-1,
        pad_token_id=0,
    )
    torch.manual_seed(1234)
    model = LlavaForConditionalGeneration(config)
    model.eval()
    model.save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def prompt_list(tmp_path_factory):
    """Five samples: four with an image, one text-only."""
    root = tmp_path_factory.mktemp("bench")
    (root / "images").mkdir()
    rng = np.random.default_rng(5)
    records = []
    for i in range(4):
        name = f"images/s{i}.png"
        Image.fromarray(
            rng.integers(0, 255, size=(36, 36, 3), dtype=np.uint8)
        ).save(root / name)
        records.append(
            {"id": f"img{i}", "text": "<s> describe <image> briefly", "image": name}
        )
    records.append({"id": "txt0", "text": "<s> what color is the cat"})
    path = root / "prompts.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path
