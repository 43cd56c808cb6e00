#pragma once

#include "rcc/chaingen.hpp"
#include "rcc/error.hpp"
#include "rcc/evalkit.hpp"
#include "rcc/http_transport.hpp"
#include "rcc/io.hpp"
#include "rcc/llmgateway.hpp"
#include "rcc/optim.hpp"
#include "rcc/pipeline.hpp"
#include "rcc/random.hpp"
#include "rcc/rankloss.hpp"
#include "rcc/text.hpp"
#include "rcc/toypolicy.hpp"
#include "rcc/transform.hpp"
