#pragma once

#include <string>
#include <vector>

namespace mase {

enum class EntryKind { normal, emergency_penalty };

inline const char* to_string(EntryKind kind) { return kind == EntryKind::normal ? "normal" : "emergency_penalty"; }

struct BufferEntry {
    int episode = 0;
    int h = 1;
    int state = 0;
    int action = 0;
    int next_state = 0;
    double original_reward = 0.0;
    double effective_reward = 0.0;
    EntryKind kind = EntryKind::normal;
    double min_width = 0.0;      // min_a Gamma(next_state, a) when last written
    double next_threshold = 0.0; // b_{h+1} in force for the emptiness check
    bool last_step = false;      // h == H

    /// No bootstrapping from next_state: the episode ended here.
    bool terminal() const noexcept { return last_step || kind == EntryKind::emergency_penalty; }

    bool operator==(const BufferEntry&) const = default;
};

class ReplayBuffer {
public:
    void append(const BufferEntry& entry) { entries_.push_back(entry); }
    void clear() { entries_.clear(); }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    const std::vector<BufferEntry>& entries() const noexcept { return entries_; }
    std::vector<BufferEntry>& entries() noexcept { return entries_; }

    std::size_t count(EntryKind kind) const
    {
        std::size_t n = 0;
        for (const auto& e : entries_)
            n += e.kind == kind ? 1 : 0;
        return n;
    }

    bool operator==(const ReplayBuffer&) const = default;

private:
    std::vector<BufferEntry> entries_;
};

} // namespace mase
