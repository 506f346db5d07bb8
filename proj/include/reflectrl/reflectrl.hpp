// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "chat_client.hpp"
#include "cold_start.hpp"
#include "common.hpp"
#include "datasmith.hpp"
#include "episode.hpp"
#include "eval.hpp"
#include "grpo.hpp"
#include "prompts.hpp"
#include "reward.hpp"
#include "transcript.hpp"
