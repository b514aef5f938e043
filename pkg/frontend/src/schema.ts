/**
 * Zod schemas for every payload the rolecraft HTTP API exchanges.
 *
 * The schemas are strict: unknown keys fail parsing, so fixture and
 * live-server tests catch contract drift on either side. Browser code
 * imports only the inferred types (type-only imports, erased at
 * compile time), keeping zod out of the runtime bundle.
 */

import { z } from "zod";

export const matchingModeSchema = z.enum(["simple", "parallel", "dynamic"]);

export const personaSummarySchema = z
  .object({
    name: z.string(),
    slug: z.string(),
    language: z.string(),
    utterance_count: z.number().int().nonnegative(),
    has_memory: z.boolean(),
  })
  .strict();

const wordCountSchema = z.tuple([z.string(), z.number().int()]);

export const personaSchema = z
  .object({
    name: z.string(),
    language: z.string(),
    personality: z
      .object({
        synthesized: z.string(),
        per_chunk_traits: z.array(z.tuple([z.number().int(), z.string()])),
      })
      .strict(),
    background: z.record(z.string(), z.string()),
    style_preferences: z.string(),
    common_words: z.record(z.string(), z.array(wordCountSchema)),
    aliases: z.record(z.string(), z.array(z.string())),
    slug: z.string(),
    utterance_count: z.number().int().nonnegative(),
    has_memory: z.boolean(),
  })
  .strict();

export const pipelineConfigSchema = z
  .object({
    memory_check_enabled: z.boolean(),
    style_before_memory: z.boolean(),
    style_removal_enabled: z.boolean(),
    summarize_after_memory: z.boolean(),
    matching_mode: matchingModeSchema,
    exemplar_k: z.number().int().positive(),
    memory_k: z.number().int().positive(),
    max_response_sentences: z.number().int().positive().nullable(),
  })
  .strict();

export const segmentSchema = z
  .object({
    kind: z.enum(["action", "sentence"]),
    text: z.string(),
    position: z.number().int().nonnegative(),
    lead: z.string(),
    tail: z.string(),
  })
  .strict();

export const segmentRewriteSchema = z
  .object({
    position: z.number().int().nonnegative(),
    exemplars: z.array(z.string()),
    rewritten: z.string(),
  })
  .strict();

export const memoryHitSchema = z
  .object({
    kind: z.enum(["entity", "relation", "chunk"]),
    text: z.string(),
    score: z.number(),
    provenance: z.array(z.number().int()),
  })
  .strict();

/** Per-turn trace. Keys for disabled stages are absent, not null. */
export const traceSchema = z
  .object({
    user_message: z.string(),
    reply: z.string(),
    stage_order: z.array(z.string()),
    matching_mode: matchingModeSchema,
    styleless: z.string(),
    persona_prompt: z.string(),
    keyword_fallback: z.boolean(),
    segments: z.array(segmentSchema),
    per_segment: z.array(segmentRewriteSchema),
    stylized: z.string(),
    call_counts: z.record(z.string(), z.number().int().nonnegative()),
    notes: z.array(z.string()),
    rewrite_keywords: z.array(z.string()).optional(),
    memory_hits: z.array(memoryHitSchema).optional(),
    memory_checked: z.string().optional(),
    summarized: z.string().optional(),
    style_removed: z.string().optional(),
  })
  .strict();

export const messageResponseSchema = z
  .object({
    session_id: z.string(),
    trace_id: z.string(),
    turn_index: z.number().int().nonnegative(),
    reply: z.string(),
    trace: traceSchema,
  })
  .strict();

export const historyEntrySchema = z
  .object({
    user: z.string(),
    assistant: z.string(),
    trace_id: z.string(),
  })
  .strict();

export const sessionRecordSchema = z
  .object({
    format_version: z.number().int(),
    session_id: z.string(),
    persona: z.string(),
    persona_slug: z.string(),
    config: pipelineConfigSchema,
    created_at: z.string(),
    updated_at: z.string(),
    history: z.array(historyEntrySchema),
  })
  .strict();

export const traceRecordSchema = z
  .object({
    format_version: z.number().int(),
    trace_id: z.string(),
    session_id: z.string(),
    turn_index: z.number().int().nonnegative(),
    created_at: z.string(),
    trace: traceSchema,
  })
  .strict();

export const apiErrorSchema = z
  .object({
    code: z.string(),
    message: z.string(),
  })
  .strict();

export type MatchingMode = z.infer<typeof matchingModeSchema>;
export type PersonaSummary = z.infer<typeof personaSummarySchema>;
export type Persona = z.infer<typeof personaSchema>;
export type PipelineConfig = z.infer<typeof pipelineConfigSchema>;
export type Segment = z.infer<typeof segmentSchema>;
export type SegmentRewrite = z.infer<typeof segmentRewriteSchema>;
export type MemoryHit = z.infer<typeof memoryHitSchema>;
export type Trace = z.infer<typeof traceSchema>;
export type MessageResponse = z.infer<typeof messageResponseSchema>;
export type HistoryEntry = z.infer<typeof historyEntrySchema>;
export type SessionRecord = z.infer<typeof sessionRecordSchema>;
export type TraceRecord = z.infer<typeof traceRecordSchema>;
