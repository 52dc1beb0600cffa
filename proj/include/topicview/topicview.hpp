#pragma once

#include "topicview/commands.hpp"
#include "topicview/config.hpp"
#include "topicview/corpus.hpp"
#include "topicview/embeddings.hpp"
#include "topicview/error.hpp"
#include "topicview/etm.hpp"
#include "topicview/imagegen.hpp"
#include "topicview/metrics.hpp"
#include "topicview/service.hpp"
#include "topicview/temporal.hpp"
