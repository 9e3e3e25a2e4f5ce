#pragma once

/** Convenience include for the whole library. */

#include "mgd/common.hpp"
#include "mgd/decode.hpp"
#include "mgd/harness.hpp"
#include "mgd/javalex.hpp"
#include "mgd/lm.hpp"
#include "mgd/metrics.hpp"
#include "mgd/monitor.hpp"
#include "mgd/remote.hpp"
#include "mgd/subprocess.hpp"
#include "mgd/suggest.hpp"
#include "mgd/testcase.hpp"
#include "mgd/vocab.hpp"
