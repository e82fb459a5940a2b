/**
 * Operator commands: submit a query, abort a running session, or issue a
 * follow-up seeded by the previous answer.
 *
 * steerSession never mutates the console state it is given. On success it
 * returns a new state; when the server rejects the command the original
 * state object is returned untouched together with the rejection text, so
 * the console can surface the error inline without losing anything.
 */
import { ConsoleClient, ServerRejection, type SessionRequest } from "./client.js";
import { emptyViewModel, type SessionViewModel } from "./timeline.js";

export interface SessionTab {
  viewModel: SessionViewModel;
  eventsUrl: string;
  /** Session id of the exchange this one follows up on, if any. */
  followUpOf: string | null;
}

export interface ConsoleState {
  tabs: SessionTab[];
}

export type SteerAction =
  | { type: "submit"; request: SessionRequest }
  | { type: "abort"; sessionId: string }
  | { type: "follow_up"; sessionId: string; question: string };

export interface SteerOutcome {
  state: ConsoleState;
  /** Inline error text when the command was rejected; null on success. */
  rejection: string | null;
  /** Session the command created or targeted, when it succeeded. */
  sessionId: string | null;
}

export function emptyConsoleState(): ConsoleState {
  return { tabs: [] };
}

function findTab(state: ConsoleState, sessionId: string): SessionTab | undefined {
  return state.tabs.find((tab) => tab.viewModel.handle.sessionId === sessionId);
}

function withTab(state: ConsoleState, tab: SessionTab): ConsoleState {
  return { tabs: [...state.tabs, tab] };
}

export async function steerSession(
  client: ConsoleClient,
  state: ConsoleState,
  action: SteerAction,
): Promise<SteerOutcome> {
  try {
    switch (action.type) {
      case "submit": {
        const created = await client.createSession(action.request);
        const tab: SessionTab = {
          viewModel: emptyViewModel(created.sessionId),
          eventsUrl: created.eventsUrl,
          followUpOf: null,
        };
        return { state: withTab(state, tab), rejection: null, sessionId: created.sessionId };
      }
      case "abort": {
        if (findTab(state, action.sessionId) === undefined) {
          return { state, rejection: `no open session ${action.sessionId}`, sessionId: null };
        }
        await client.abortSession(action.sessionId);
        // The aborted terminal card arrives over the event stream; nothing
        // changes here beyond acknowledging the command went through.
        return { state, rejection: null, sessionId: action.sessionId };
      }
      case "follow_up": {
        const prior = findTab(state, action.sessionId);
        if (prior === undefined) {
          return { state, rejection: `no open session ${action.sessionId}`, sessionId: null };
        }
        const answer = prior.viewModel.answer;
        const studyId = prior.viewModel.handle.studyId;
        if (answer === null || studyId === null) {
          return {
            state,
            rejection: `session ${action.sessionId} has no answer to follow up on`,
            sessionId: null,
          };
        }
        const created = await client.createSession({
          question: action.question,
          studyId,
          contextSessionId: action.sessionId,
        });
        const tab: SessionTab = {
          viewModel: emptyViewModel(created.sessionId),
          eventsUrl: created.eventsUrl,
          followUpOf: action.sessionId,
        };
        return { state: withTab(state, tab), rejection: null, sessionId: created.sessionId };
      }
    }
  } catch (err) {
    if (err instanceof ServerRejection) {
      return { state, rejection: err.detail, sessionId: null };
    }
    throw err;
  }
}

/** Replace one tab's view model after new events arrived on its stream. */
export function updateTab(state: ConsoleState, vm: SessionViewModel): ConsoleState {
  return {
    tabs: state.tabs.map((tab) =>
      tab.viewModel.handle.sessionId === vm.handle.sessionId ? { ...tab, viewModel: vm } : tab,
    ),
  };
}
