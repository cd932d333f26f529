#pragma once

#include "coherent_ed/errors.hpp"
#include "coherent_ed/tensor.hpp"
#include "coherent_ed/ops.hpp"
#include "coherent_ed/grad_check.hpp"
#include "coherent_ed/optim.hpp"
#include "coherent_ed/parameters.hpp"
#include "coherent_ed/transformer.hpp"
#include "coherent_ed/topic_vae.hpp"
#include "coherent_ed/category_memory.hpp"
#include "coherent_ed/kb.hpp"
#include "coherent_ed/tokenizer.hpp"
#include "coherent_ed/synthetic.hpp"
#include "coherent_ed/inputs.hpp"
#include "coherent_ed/model.hpp"
#include "coherent_ed/trainer.hpp"
#include "coherent_ed/eval.hpp"
#include "coherent_ed/inference.hpp"
#include "coherent_ed/config.hpp"
#include "coherent_ed/checkpoint.hpp"
#include "coherent_ed/cli.hpp"
