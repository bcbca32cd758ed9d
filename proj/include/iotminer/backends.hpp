#pragma once

// Network-backed implementations of the pipeline's labeling and similarity factories.

#include <memory>

#include "iotminer/embedding_http.hpp"
#include "iotminer/llm_http.hpp"
#include "iotminer/pipeline.hpp"

namespace iotminer {

/// Factories honouring `labeling.backend = http` and `evaluation.provider = embedding`.
inline Backends network_backends() {
    Backends b;
    b.llm = [](const PipelineConfig& c) -> std::unique_ptr<LlmBackend> {
        if (c.labeling.backend == "http") return std::make_unique<HttpLlmBackend>();
        return make_mock_backend(c);
    };
    b.similarity = [](const EvaluationSettings& s) -> std::unique_ptr<SimilarityProvider> {
        if (s.provider == "embedding") {
            EmbeddingOptions o;
            o.endpoint = s.embedding_endpoint;
            o.model = s.embedding_model;
            return std::make_unique<EmbeddingSimilarity>(o);
        }
        return make_lexical_provider();
    };
    return b;
}

} // namespace iotminer
