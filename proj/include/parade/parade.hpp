#pragma once

#include "parade/backend.hpp"
#include "parade/core.hpp"
#include "parade/eval.hpp"
#include "parade/http_backend.hpp"
#include "parade/ingest.hpp"
#include "parade/prompt.hpp"
#include "parade/qgen.hpp"
#include "parade/rank.hpp"
#include "parade/select.hpp"
