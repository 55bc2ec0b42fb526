#pragma once

#include "mcross/adam.hpp"
#include "mcross/bm25.hpp"
#include "mcross/checkpoint.hpp"
#include "mcross/cloze.hpp"
#include "mcross/common.hpp"
#include "mcross/corpus.hpp"
#include "mcross/encoder.hpp"
#include "mcross/evaluate.hpp"
#include "mcross/jsonl.hpp"
#include "mcross/losses.hpp"
#include "mcross/manifest.hpp"
#include "mcross/moco.hpp"
#include "mcross/rng.hpp"
#include "mcross/samples.hpp"
#include "mcross/sequence.hpp"
#include "mcross/span.hpp"
#include "mcross/tensor.hpp"
#include "mcross/text.hpp"
#include "mcross/trainer.hpp"
#include "mcross/vocab.hpp"
