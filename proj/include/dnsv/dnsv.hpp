#pragma once

// Umbrella header for the toolkit: audio front-end, network engine,
// embedding extraction, scoring back-ends, metrics, synthetic corpora, and
// the end-to-end comparison pipeline.

#include "dnsv/backend.hpp"
#include "dnsv/embedding.hpp"
#include "dnsv/errors.hpp"
#include "dnsv/feature_io.hpp"
#include "dnsv/features.hpp"
#include "dnsv/metrics.hpp"
#include "dnsv/model.hpp"
#include "dnsv/pipeline.hpp"
#include "dnsv/rng.hpp"
#include "dnsv/synth.hpp"
#include "dnsv/tensor.hpp"
#include "dnsv/train.hpp"
#include "dnsv/wav.hpp"
